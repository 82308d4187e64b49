//! Block-sequential classifiers and the shallow auxiliary-classifier scaffold.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, BasicBlock, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, Mode, Param, Relu, Sequential};
use crate::rng::stream_seed;
use crate::tensor::Tensor;

/// RNG stream ids used for initialization, so the auxiliary head never shifts the main model's draws.
const MODEL_INIT_STREAM: u64 = 0x4d4f_4445_4c00;
const AUX_INIT_STREAM: u64 = 0x4155_5800;

/// Architecture of a registered block-sequential residual network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Output channels of each block; the first block runs at input resolution, the rest halve it.
    pub widths: Vec<usize>,
    pub residual_units_per_block: usize,
}

impl ModelSpec {
    pub fn num_blocks(&self) -> usize {
        self.widths.len()
    }

    pub fn default_tap(&self) -> TapPoint {
        TapPoint(2.min(self.num_blocks()))
    }
}

/// Names accepted by [`model_registry`].
pub const REGISTERED_MODELS: &[&str] = &["micro-resnet-3block", "tiny-resnet-3block", "resnet18-style"];

/// Looks up a registered architecture and builds it with freshly initialized weights.
pub fn model_registry(name: &str, num_classes: usize, in_channels: usize, seed: u64) -> Result<BlockSequentialModel> {
    Ok(BlockSequentialModel::new(model_spec(name, num_classes, in_channels)?, seed))
}

pub fn model_spec(name: &str, num_classes: usize, in_channels: usize) -> Result<ModelSpec> {
    let (widths, units) = match name {
        "micro-resnet-3block" => (vec![8, 16, 32], 1),
        "tiny-resnet-3block" => (vec![16, 32, 64], 1),
        "resnet18-style" => (vec![64, 128, 256, 512], 2),
        _ => {
            return Err(Error::UnknownName {
                kind: "model",
                name: name.to_string(),
                available: REGISTERED_MODELS.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    if num_classes < 2 {
        return Err(Error::invalid("a classifier needs at least 2 classes"));
    }
    Ok(ModelSpec { name: name.to_string(), in_channels, num_classes, widths, residual_units_per_block: units })
}

/// One indexable stage of the network.
pub struct Block {
    layers: Sequential,
    out_channels: usize,
    forward_calls: usize,
}

impl Block {
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// How many times `forward` ran; used to check the shallow path is shared.
    pub fn forward_calls(&self) -> usize {
        self.forward_calls
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.forward_calls += 1;
        self.layers.forward(x, mode)
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        self.layers.backward(g)
    }
}

/// `h(theta, x)`: stem folded into block 1, then strided residual blocks, then GAP + linear head.
pub struct BlockSequentialModel {
    spec: ModelSpec,
    blocks: Vec<Block>,
    head: Sequential,
}

impl BlockSequentialModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, MODEL_INIT_STREAM, 0));
        let mut blocks = Vec::with_capacity(spec.widths.len());
        let mut in_ch = spec.in_channels;
        for (b, &width) in spec.widths.iter().enumerate() {
            let mut layers = Sequential::new();
            let stride = if b == 0 {
                layers
                    .push(Conv2d::new("block1.stem.conv", in_ch, width, 3, 1, 1, &mut rng))
                    .push(BatchNorm2d::new("block1.stem.bn", width))
                    .push(Relu::new());
                in_ch = width;
                1
            } else {
                2
            };
            for unit in 0..spec.residual_units_per_block {
                let s = if unit == 0 { stride } else { 1 };
                let name = format!("block{}.unit{}", b + 1, unit + 1);
                layers.push(BasicBlock::new(&name, in_ch, width, s, &mut rng));
                in_ch = width;
            }
            blocks.push(Block { layers, out_channels: width, forward_calls: 0 });
        }
        let mut head = Sequential::new();
        head.push(GlobalAvgPool::new()).push(Linear::new("head.fc", in_ch, spec.num_classes, &mut rng));
        Self { spec, blocks, head }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn block(&self, index: usize) -> &Block {
        &self.blocks[index]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1] != self.spec.in_channels || x.batch() == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("[N>0, {}, H, W]", self.spec.in_channels),
                actual: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Whole-model logits `[N, K]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &mut self.blocks {
            h = block.forward(&h, mode);
        }
        Ok(self.head.forward(&h, mode))
    }

    pub fn backward(&mut self, grad_logits: &Tensor) {
        let mut g = self.head.backward(grad_logits);
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g);
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for block in &self.blocks {
            block.layers.visit(f);
        }
        self.head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for block in &mut self.blocks {
            block.layers.visit_mut(f);
        }
        self.head.visit_mut(f);
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.len();
            }
        });
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }
}

/// Boundary after block `b` (1-based): features leaving block `b` feed the auxiliary classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TapPoint(pub usize);

impl TapPoint {
    pub fn validate(self, num_blocks: usize) -> Result<Self> {
        if self.0 == 0 || self.0 > num_blocks {
            Err(Error::TapOutOfRange { tap: self.0, num_blocks })
        } else {
            Ok(self)
        }
    }

    pub fn block_index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B#{}", self.0)
    }
}

/// Auxiliary classifier architecture: one stride-2 conv-BN-ReLU stage, GAP, linear to `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcSpec {
    /// Conv output channels; `None` means twice the tapped feature width.
    pub channels: Option<usize>,
    pub num_classes: usize,
}

impl AcSpec {
    pub fn for_classes(num_classes: usize) -> Self {
        Self { channels: None, num_classes }
    }

    pub fn resolved_channels(&self, tapped_width: usize) -> usize {
        self.channels.unwrap_or(2 * tapped_width)
    }
}

/// `g(theta_hat, w, x)` minus the shared shallow blocks: the "poor teacher" head.
pub struct AuxiliaryClassifier {
    layers: Sequential,
    channels: usize,
    num_classes: usize,
}

impl AuxiliaryClassifier {
    fn new(in_channels: usize, spec: &AcSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, AUX_INIT_STREAM, 0));
        let channels = spec.resolved_channels(in_channels);
        let mut layers = Sequential::new();
        layers
            .push(Conv2d::new("aux.conv", in_channels, channels, 3, 2, 1, &mut rng))
            .push(BatchNorm2d::new("aux.bn", channels))
            .push(Relu::new())
            .push(GlobalAvgPool::new())
            .push(Linear::new("aux.fc", channels, spec.num_classes, &mut rng));
        Self { layers, channels, num_classes: spec.num_classes }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn parameter_count(&self) -> usize {
        nn::parameter_count(&self.layers)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.visit_mut(f);
    }
}

/// Main and auxiliary logits from one shared pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldOutput {
    /// `z`, `[N, K]`
    pub main_logits: Tensor,
    /// `z'`, `[N, K]`
    pub aux_logits: Tensor,
}

/// A model with an auxiliary classifier attached after a shallow block.
pub struct Scaffold {
    model: BlockSequentialModel,
    tap: TapPoint,
    aux: AuxiliaryClassifier,
}

/// Attaches an auxiliary classifier after block `tap`. The main path is left untouched.
pub fn attach_auxiliary(model: BlockSequentialModel, tap: TapPoint, ac_spec: AcSpec, seed: u64) -> Result<Scaffold> {
    let tap = tap.validate(model.num_blocks())?;
    if ac_spec.num_classes != model.num_classes() {
        return Err(Error::ClassCountMismatch { left: ac_spec.num_classes, right: model.num_classes() });
    }
    let in_channels = model.block(tap.0 - 1).out_channels();
    let aux = AuxiliaryClassifier::new(in_channels, &ac_spec, seed);
    Ok(Scaffold { model, tap, aux })
}

/// Sizes of the three disjoint trainable groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParameterPartition {
    /// `theta_hat`: blocks `1..=tap`.
    pub shallow: usize,
    /// `theta \ theta_hat`: deeper blocks and the main head.
    pub deep: usize,
    /// `w`: auxiliary classifier.
    pub auxiliary: usize,
}

impl ParameterPartition {
    pub fn model_total(&self) -> usize {
        self.shallow + self.deep
    }

    pub fn total(&self) -> usize {
        self.shallow + self.deep + self.auxiliary
    }
}

/// Which group a named parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Shallow,
    Deep,
    Auxiliary,
}

impl Scaffold {
    pub fn model(&self) -> &BlockSequentialModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut BlockSequentialModel {
        &mut self.model
    }

    pub fn aux(&self) -> &AuxiliaryClassifier {
        &self.aux
    }

    pub fn tap(&self) -> TapPoint {
        self.tap
    }

    pub fn into_model(self) -> BlockSequentialModel {
        self.model
    }

    /// Shallow blocks run once; their output feeds both the deep blocks and the auxiliary head.
    pub fn forward_dual(&mut self, x: &Tensor, mode: Mode) -> Result<ScaffoldOutput> {
        self.model.check_input(x)?;
        let mut h = x.clone();
        let mut aux_logits = None;
        for (b, block) in self.model.blocks.iter_mut().enumerate() {
            h = block.forward(&h, mode);
            if b + 1 == self.tap.0 {
                aux_logits = Some(self.aux.layers.forward(&h, mode));
            }
        }
        let main_logits = self.model.head.forward(&h, mode);
        Ok(ScaffoldOutput { main_logits, aux_logits: aux_logits.expect("validated tap") })
    }

    /// Main-path-only forward, identical to the unscaffolded model.
    pub fn forward_main(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.model.forward(x, mode)
    }

    pub fn backward_dual(&mut self, grad_main: &Tensor, grad_aux: &Tensor) {
        let mut g = self.model.head.backward(grad_main);
        for b in (0..self.model.blocks.len()).rev() {
            if b + 1 == self.tap.0 {
                g.add_assign(&self.aux.layers.backward(grad_aux));
            }
            g = self.model.blocks[b].backward(&g);
        }
    }

    pub fn parameter_partition(&self) -> ParameterPartition {
        let mut part = ParameterPartition { shallow: 0, deep: 0, auxiliary: self.aux.parameter_count() };
        self.visit_grouped(&mut |group, p| {
            if p.trainable {
                match group {
                    ParamGroup::Shallow => part.shallow += p.len(),
                    ParamGroup::Deep => part.deep += p.len(),
                    ParamGroup::Auxiliary => {}
                }
            }
        });
        part
    }

    pub fn visit_grouped(&self, f: &mut dyn FnMut(ParamGroup, &Param)) {
        for (b, block) in self.model.blocks.iter().enumerate() {
            let group = if b < self.tap.0 { ParamGroup::Shallow } else { ParamGroup::Deep };
            block.layers.visit(&mut |p| f(group, p));
        }
        self.model.head.visit(&mut |p| f(ParamGroup::Deep, p));
        self.aux.visit(&mut |p| f(ParamGroup::Auxiliary, p));
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.model.visit(f);
        self.aux.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.model.visit_mut(f);
        self.aux.visit_mut(f);
    }

    pub fn parameter_count(&self) -> usize {
        self.model.parameter_count() + self.aux.parameter_count()
    }
}
