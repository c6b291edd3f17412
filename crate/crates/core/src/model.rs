//! The six-component network: a shared feature trunk feeding a task branch
//! (with task-of-interest and irrelevant-task heads) and a domain branch
//! (with a scalar domain head), coupled through a gradient reversal layer.
//!
//! Two backbones are supported. The small CNN uses three conv blocks in the
//! trunk and three in each branch (3x3 kernels, batch norm, ReLU, ceil-mode
//! 2x2 max pool) with global average pooling into the embedding. The
//! ResNet-50 split assigns the stem and stages 1-3 to the trunk and gives
//! each branch its own copy of stage 4; the two copies start identical and
//! are updated independently.

pub mod checkpoint;

use crate::error::{Error, Result};
use crate::nn::{
    ConvBlock, ConvBlockCache, GlobalAvgPool, InitRng, Linear, MaxPool2d, Param,
};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array4, Dimension};

/// Identity in the forward pass; multiplies gradients by `-coefficient` on
/// the way back. This realizes the min/max of adversarial training inside a
/// single backward pass.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GradientReversal {
    pub coefficient: f64,
}

impl GradientReversal {
    pub fn new(coefficient: f64) -> Result<Self> {
        if coefficient < 0.0 {
            return Err(Error::config(format!(
                "reversal coefficient must be >= 0, got {coefficient}"
            )));
        }
        Ok(Self { coefficient })
    }

    /// Backward rule: `-coefficient * upstream`, elementwise.
    pub fn reverse<F: Scalar, D: Dimension>(
        &self,
        upstream: &ndarray::Array<F, D>,
    ) -> ndarray::Array<F, D> {
        let c = F::from_f64(-self.coefficient);
        upstream.mapv(|g| c * g)
    }
}

/// Free-function form of the backward rule, for gradient vectors.
pub fn grl_backward<F: Scalar>(grl: &GradientReversal, upstream: &[F]) -> Vec<F> {
    let c = F::from_f64(-grl.coefficient);
    upstream.iter().map(|&g| c * g).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Backbone {
    SmallCnn,
    PretrainedResnet50Split,
}

/// Network architecture description.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchitectureConfig {
    pub backbone: Backbone,
    /// Trunk conv channels (small CNN: exactly 3 entries).
    pub conv_channels_g: Vec<usize>,
    /// Branch conv channels, used by both branches (small CNN: exactly 3).
    pub conv_channels_branch: Vec<usize>,
    /// (m_f, m_d): task and domain embedding widths.
    pub embedding_dims: (usize, usize),
    /// (H, W, 3).
    pub input_shape: (usize, usize, usize),
    /// (|task-of-interest classes|, |irrelevant-task classes|).
    pub head_class_counts: (usize, usize),
}

impl ArchitectureConfig {
    /// Small-CNN configuration with the default channel plan.
    pub fn small_cnn(input_hw: (usize, usize), classes: (usize, usize)) -> Self {
        Self {
            backbone: Backbone::SmallCnn,
            conv_channels_g: vec![32, 64, 64],
            conv_channels_branch: vec![64, 64, 128],
            embedding_dims: (128, 128),
            input_shape: (input_hw.0, input_hw.1, 3),
            head_class_counts: classes,
        }
    }

    /// A slimmer small-CNN plan for desk-scale CPU experiments.
    pub fn small_cnn_compact(input_hw: (usize, usize), classes: (usize, usize)) -> Self {
        Self {
            backbone: Backbone::SmallCnn,
            conv_channels_g: vec![16, 32, 32],
            conv_channels_branch: vec![32, 32, 64],
            embedding_dims: (64, 64),
            input_shape: (input_hw.0, input_hw.1, 3),
            head_class_counts: classes,
        }
    }

    /// ResNet-50 split: trunk = stem + stages 1-3, branches = stage 4 copies.
    pub fn resnet50_split(input_hw: (usize, usize), classes: (usize, usize)) -> Self {
        Self {
            backbone: Backbone::PretrainedResnet50Split,
            conv_channels_g: vec![],
            conv_channels_branch: vec![],
            embedding_dims: (2048, 2048),
            input_shape: (input_hw.0, input_hw.1, 3),
            head_class_counts: classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if c != 3 {
            return Err(Error::config("input shape must be (H, W, 3)"));
        }
        if self.head_class_counts.0 == 0 || self.head_class_counts.1 == 0 {
            return Err(Error::config("both heads need at least one class"));
        }
        match self.backbone {
            Backbone::SmallCnn => {
                if self.conv_channels_g.len() != 3 || self.conv_channels_branch.len() != 3 {
                    return Err(Error::config(
                        "small CNN uses exactly 3 conv layers in the trunk and in each branch",
                    ));
                }
                let m = *self.conv_channels_branch.last().unwrap();
                if self.embedding_dims != (m, m) {
                    return Err(Error::config(format!(
                        "embedding dims {:?} must equal the last branch channel count {m} \
                         (embeddings are global-average-pooled branch outputs)",
                        self.embedding_dims
                    )));
                }
                if h < 8 || w < 8 {
                    return Err(Error::config("small CNN needs inputs of at least 8x8"));
                }
            }
            Backbone::PretrainedResnet50Split => {
                if self.embedding_dims != (2048, 2048) {
                    return Err(Error::config("ResNet-50 branches embed at 2048"));
                }
                if h < 32 || w < 32 {
                    return Err(Error::config("ResNet-50 needs inputs of at least 32x32"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// ResNet-50 pieces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Bottleneck<F: Scalar> {
    conv1: crate::nn::Conv2d<F>,
    bn1: crate::nn::BatchNorm2d<F>,
    conv2: crate::nn::Conv2d<F>,
    bn2: crate::nn::BatchNorm2d<F>,
    conv3: crate::nn::Conv2d<F>,
    bn3: crate::nn::BatchNorm2d<F>,
    down: Option<(crate::nn::Conv2d<F>, crate::nn::BatchNorm2d<F>)>,
}

pub struct BottleneckCache<F: Scalar> {
    c1: crate::nn::ConvCache<F>,
    b1: crate::nn::BnCache<F>,
    a1: Array4<F>,
    c2: crate::nn::ConvCache<F>,
    b2: crate::nn::BnCache<F>,
    a2: Array4<F>,
    c3: crate::nn::ConvCache<F>,
    b3: crate::nn::BnCache<F>,
    down: Option<(crate::nn::ConvCache<F>, crate::nn::BnCache<F>)>,
    out: Array4<F>,
}

impl<F: Scalar> Bottleneck<F> {
    fn new(name: &str, c_in: usize, mid: usize, c_out: usize, stride: usize, rng: &mut InitRng) -> Self {
        use crate::nn::{BatchNorm2d, Conv2d};
        let down = if stride != 1 || c_in != c_out {
            Some((
                Conv2d::new(&format!("{name}.down.conv"), c_in, c_out, 1, stride, 0, rng),
                BatchNorm2d::new(&format!("{name}.down.bn"), c_out),
            ))
        } else {
            None
        };
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), c_in, mid, 1, 1, 0, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), mid),
            conv2: Conv2d::new(&format!("{name}.conv2"), mid, mid, 3, stride, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), mid),
            conv3: Conv2d::new(&format!("{name}.conv3"), mid, c_out, 1, 1, 0, rng),
            bn3: BatchNorm2d::new(&format!("{name}.bn3"), c_out),
            down,
        }
    }

    fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, BottleneckCache<F>) {
        let (z, c1) = self.conv1.forward(x);
        let (z, b1) = self.bn1.forward_train(&z);
        let a1 = crate::nn::relu(&z);
        let (z, c2) = self.conv2.forward(&a1);
        let (z, b2) = self.bn2.forward_train(&z);
        let a2 = crate::nn::relu(&z);
        let (z, c3) = self.conv3.forward(&a2);
        let (mut s, b3) = self.bn3.forward_train(&z);
        let down = match &mut self.down {
            Some((dc, db)) => {
                let (i, cc) = dc.forward(x);
                let (i, cb) = db.forward_train(&i);
                s += &i;
                Some((cc, cb))
            }
            None => {
                s += x;
                None
            }
        };
        let out = crate::nn::relu(&s);
        (
            out.clone(),
            BottleneckCache {
                c1,
                b1,
                a1,
                c2,
                b2,
                a2,
                c3,
                b3,
                down,
                out,
            },
        )
    }

    fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let (z, _) = self.conv1.forward(x);
        let a1 = crate::nn::relu(&self.bn1.forward_eval(&z));
        let (z, _) = self.conv2.forward(&a1);
        let a2 = crate::nn::relu(&self.bn2.forward_eval(&z));
        let (z, _) = self.conv3.forward(&a2);
        let mut s = self.bn3.forward_eval(&z);
        match &self.down {
            Some((dc, db)) => {
                let (i, _) = dc.forward(x);
                s += &db.forward_eval(&i);
            }
            None => s += x,
        }
        crate::nn::relu(&s)
    }

    fn backward(&mut self, cache: &BottleneckCache<F>, dy: &Array4<F>) -> Array4<F> {
        let ds = crate::nn::relu_backward(&cache.out, dy);
        let dz = self.bn3.backward(&cache.b3, &ds);
        let da2 = self.conv3.backward(&cache.c3, &dz);
        let dz = crate::nn::relu_backward(&cache.a2, &da2);
        let dz = self.bn2.backward(&cache.b2, &dz);
        let da1 = self.conv2.backward(&cache.c2, &dz);
        let dz = crate::nn::relu_backward(&cache.a1, &da1);
        let dz = self.bn1.backward(&cache.b1, &dz);
        let mut dx = self.conv1.backward(&cache.c1, &dz);
        match (&mut self.down, &cache.down) {
            (Some((dc, db)), Some((cc, cb))) => {
                let d = db.backward(cb, &ds);
                dx += &dc.backward(cc, &d);
            }
            _ => dx += &ds,
        }
        dx
    }

    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        self.conv2.collect_params(out);
        self.bn2.collect_params(out);
        self.conv3.collect_params(out);
        self.bn3.collect_params(out);
        if let Some((dc, db)) = &mut self.down {
            dc.collect_params(out);
            db.collect_params(out);
        }
    }

    fn param_refs<'a>(&'a self, out: &mut Vec<&'a Param<F>>) {
        self.conv1.param_refs(out);
        self.bn1.param_refs(out);
        self.conv2.param_refs(out);
        self.bn2.param_refs(out);
        self.conv3.param_refs(out);
        self.bn3.param_refs(out);
        if let Some((dc, db)) = &self.down {
            dc.param_refs(out);
            db.param_refs(out);
        }
    }

    fn collect_buffers<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array1<F>)>) {
        self.bn1.collect_buffers(out);
        self.bn2.collect_buffers(out);
        self.bn3.collect_buffers(out);
        if let Some((_, db)) = &mut self.down {
            db.collect_buffers(out);
        }
    }

    fn buffer_refs<'a>(&'a self, out: &mut Vec<(String, &'a Array1<F>)>) {
        self.bn1.buffer_refs(out);
        self.bn2.buffer_refs(out);
        self.bn3.buffer_refs(out);
        if let Some((_, db)) = &self.down {
            db.buffer_refs(out);
        }
    }
}

fn resnet_stage<F: Scalar>(
    name: &str,
    c_in: usize,
    mid: usize,
    c_out: usize,
    blocks: usize,
    stride: usize,
    rng: &mut InitRng,
) -> Vec<Bottleneck<F>> {
    let mut v = Vec::with_capacity(blocks);
    v.push(Bottleneck::new(&format!("{name}.0"), c_in, mid, c_out, stride, rng));
    for b in 1..blocks {
        v.push(Bottleneck::new(&format!("{name}.{b}"), c_out, mid, c_out, 1, rng));
    }
    v
}

#[derive(Debug, Clone)]
pub struct ResnetTrunk<F: Scalar> {
    stem_conv: crate::nn::Conv2d<F>,
    stem_bn: crate::nn::BatchNorm2d<F>,
    stem_pool: MaxPool2d,
    stages: Vec<Vec<Bottleneck<F>>>, // stages 1-3
}

pub struct ResnetTrunkCache<F: Scalar> {
    stem_c: crate::nn::ConvCache<F>,
    stem_b: crate::nn::BnCache<F>,
    stem_a: Array4<F>,
    stem_p: crate::nn::PoolCache,
    blocks: Vec<BottleneckCache<F>>,
}

impl<F: Scalar> ResnetTrunk<F> {
    fn new(rng: &mut InitRng) -> Self {
        Self {
            stem_conv: crate::nn::Conv2d::new("shared.stem.conv", 3, 64, 7, 2, 3, rng),
            stem_bn: crate::nn::BatchNorm2d::new("shared.stem.bn", 64),
            stem_pool: MaxPool2d {
                kernel: 3,
                stride: 2,
                pad: 1,
                ceil: false,
            },
            stages: vec![
                resnet_stage("shared.stage1", 64, 64, 256, 3, 1, rng),
                resnet_stage("shared.stage2", 256, 128, 512, 4, 2, rng),
                resnet_stage("shared.stage3", 512, 256, 1024, 6, 2, rng),
            ],
        }
    }
}

// ---------------------------------------------------------------------------
// Trunk and branch wrappers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Trunk<F: Scalar> {
    Small(Vec<ConvBlock<F>>),
    Resnet(ResnetTrunk<F>),
}

pub enum TrunkCache<F: Scalar> {
    Small(Vec<ConvBlockCache<F>>),
    Resnet(ResnetTrunkCache<F>),
}

impl<F: Scalar> Trunk<F> {
    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, TrunkCache<F>) {
        match self {
            Trunk::Small(blocks) => {
                let mut caches = Vec::with_capacity(blocks.len());
                let mut h = x.clone();
                for b in blocks.iter_mut() {
                    let (next, c) = b.forward_train(&h);
                    caches.push(c);
                    h = next;
                }
                (h, TrunkCache::Small(caches))
            }
            Trunk::Resnet(t) => {
                let (z, stem_c) = t.stem_conv.forward(x);
                let (z, stem_b) = t.stem_bn.forward_train(&z);
                let stem_a = crate::nn::relu(&z);
                let (mut h, stem_p) = t.stem_pool.forward(&stem_a);
                let mut blocks = Vec::new();
                for stage in t.stages.iter_mut() {
                    for blk in stage.iter_mut() {
                        let (next, c) = blk.forward_train(&h);
                        blocks.push(c);
                        h = next;
                    }
                }
                (
                    h,
                    TrunkCache::Resnet(ResnetTrunkCache {
                        stem_c,
                        stem_b,
                        stem_a,
                        stem_p,
                        blocks,
                    }),
                )
            }
        }
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        match self {
            Trunk::Small(blocks) => {
                let mut h = x.clone();
                for b in blocks {
                    h = b.forward_eval(&h);
                }
                h
            }
            Trunk::Resnet(t) => {
                let (z, _) = t.stem_conv.forward(x);
                let a = crate::nn::relu(&t.stem_bn.forward_eval(&z));
                let (mut h, _) = t.stem_pool.forward(&a);
                for stage in &t.stages {
                    for blk in stage {
                        h = blk.forward_eval(&h);
                    }
                }
                h
            }
        }
    }

    pub fn backward(&mut self, cache: &TrunkCache<F>, dh: &Array4<F>) -> Array4<F> {
        match (self, cache) {
            (Trunk::Small(blocks), TrunkCache::Small(caches)) => {
                let mut d = dh.clone();
                for (b, c) in blocks.iter_mut().zip(caches).rev() {
                    d = b.backward(c, &d);
                }
                d
            }
            (Trunk::Resnet(t), TrunkCache::Resnet(rc)) => {
                let mut d = dh.clone();
                let mut idx = rc.blocks.len();
                for stage in t.stages.iter_mut().rev() {
                    for blk in stage.iter_mut().rev() {
                        idx -= 1;
                        d = blk.backward(&rc.blocks[idx], &d);
                    }
                }
                let d = t.stem_pool.backward(&rc.stem_p, &d);
                let d = crate::nn::relu_backward(&rc.stem_a, &d);
                let d = t.stem_bn.backward(&rc.stem_b, &d);
                t.stem_conv.backward(&rc.stem_c, &d)
            }
            _ => unreachable!("trunk/cache variant mismatch"),
        }
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        match self {
            Trunk::Small(blocks) => blocks.iter_mut().for_each(|b| b.collect_params(out)),
            Trunk::Resnet(t) => {
                t.stem_conv.collect_params(out);
                t.stem_bn.collect_params(out);
                for s in t.stages.iter_mut() {
                    s.iter_mut().for_each(|b| b.collect_params(out));
                }
            }
        }
    }

    pub fn param_refs<'a>(&'a self, out: &mut Vec<&'a Param<F>>) {
        match self {
            Trunk::Small(blocks) => blocks.iter().for_each(|b| b.param_refs(out)),
            Trunk::Resnet(t) => {
                t.stem_conv.param_refs(out);
                t.stem_bn.param_refs(out);
                for s in &t.stages {
                    s.iter().for_each(|b| b.param_refs(out));
                }
            }
        }
    }

    fn collect_buffers<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array1<F>)>) {
        match self {
            Trunk::Small(blocks) => blocks.iter_mut().for_each(|b| b.collect_buffers(out)),
            Trunk::Resnet(t) => {
                t.stem_bn.collect_buffers(out);
                for s in t.stages.iter_mut() {
                    s.iter_mut().for_each(|b| b.collect_buffers(out));
                }
            }
        }
    }

    fn buffer_refs<'a>(&'a self, out: &mut Vec<(String, &'a Array1<F>)>) {
        match self {
            Trunk::Small(blocks) => blocks.iter().for_each(|b| b.buffer_refs(out)),
            Trunk::Resnet(t) => {
                t.stem_bn.buffer_refs(out);
                for s in &t.stages {
                    s.iter().for_each(|b| b.buffer_refs(out));
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Branch<F: Scalar> {
    Small(Vec<ConvBlock<F>>),
    Resnet(Vec<Bottleneck<F>>),
}

pub enum BranchCache<F: Scalar> {
    Small(Vec<ConvBlockCache<F>>, (usize, usize)),
    Resnet(Vec<BottleneckCache<F>>, (usize, usize)),
}

impl<F: Scalar> Branch<F> {
    /// Feature map in, (N, m) embedding out (global average pool at the end).
    pub fn forward_train(&mut self, h: &Array4<F>) -> (Array2<F>, BranchCache<F>) {
        match self {
            Branch::Small(blocks) => {
                let mut caches = Vec::with_capacity(blocks.len());
                let mut z = h.clone();
                for b in blocks.iter_mut() {
                    let (next, c) = b.forward_train(&z);
                    caches.push(c);
                    z = next;
                }
                let (e, hw) = GlobalAvgPool.forward(&z);
                (e, BranchCache::Small(caches, hw))
            }
            Branch::Resnet(blocks) => {
                let mut caches = Vec::with_capacity(blocks.len());
                let mut z = h.clone();
                for b in blocks.iter_mut() {
                    let (next, c) = b.forward_train(&z);
                    caches.push(c);
                    z = next;
                }
                let (e, hw) = GlobalAvgPool.forward(&z);
                (e, BranchCache::Resnet(caches, hw))
            }
        }
    }

    pub fn forward_eval(&self, h: &Array4<F>) -> Array2<F> {
        match self {
            Branch::Small(blocks) => {
                let mut z = h.clone();
                for b in blocks {
                    z = b.forward_eval(&z);
                }
                GlobalAvgPool.forward(&z).0
            }
            Branch::Resnet(blocks) => {
                let mut z = h.clone();
                for b in blocks {
                    z = b.forward_eval(&z);
                }
                GlobalAvgPool.forward(&z).0
            }
        }
    }

    pub fn backward(&mut self, cache: &BranchCache<F>, d_embed: &Array2<F>) -> Array4<F> {
        match (self, cache) {
            (Branch::Small(blocks), BranchCache::Small(caches, hw)) => {
                let mut d = GlobalAvgPool.backward(*hw, d_embed);
                for (b, c) in blocks.iter_mut().zip(caches).rev() {
                    d = b.backward(c, &d);
                }
                d
            }
            (Branch::Resnet(blocks), BranchCache::Resnet(caches, hw)) => {
                let mut d = GlobalAvgPool.backward(*hw, d_embed);
                for (b, c) in blocks.iter_mut().zip(caches).rev() {
                    d = b.backward(c, &d);
                }
                d
            }
            _ => unreachable!("branch/cache variant mismatch"),
        }
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        match self {
            Branch::Small(blocks) => blocks.iter_mut().for_each(|b| b.collect_params(out)),
            Branch::Resnet(blocks) => blocks.iter_mut().for_each(|b| b.collect_params(out)),
        }
    }

    pub fn param_refs<'a>(&'a self, out: &mut Vec<&'a Param<F>>) {
        match self {
            Branch::Small(blocks) => blocks.iter().for_each(|b| b.param_refs(out)),
            Branch::Resnet(blocks) => blocks.iter().for_each(|b| b.param_refs(out)),
        }
    }

    fn collect_buffers<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array1<F>)>) {
        match self {
            Branch::Small(blocks) => blocks.iter_mut().for_each(|b| b.collect_buffers(out)),
            Branch::Resnet(blocks) => blocks.iter_mut().for_each(|b| b.collect_buffers(out)),
        }
    }

    fn buffer_refs<'a>(&'a self, out: &mut Vec<(String, &'a Array1<F>)>) {
        match self {
            Branch::Small(blocks) => blocks.iter().for_each(|b| b.buffer_refs(out)),
            Branch::Resnet(blocks) => blocks.iter().for_each(|b| b.buffer_refs(out)),
        }
    }
}

/// Which branch an embedding comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSel {
    /// Task branch (feeds the classification heads).
    Task,
    /// Domain branch (feeds the domain head).
    Domain,
}

// ---------------------------------------------------------------------------
// The bundle
// ---------------------------------------------------------------------------

/// The complete network. Composition contracts:
/// task-of-interest logits = `toi_head(task_branch(shared(x)))`,
/// irrelevant-task logits = `irt_head(task_branch(shared(x)))`,
/// domain probability = `sigmoid(domain_head(domain_branch(shared(x))))`.
#[derive(Debug, Clone)]
pub struct ModelBundle<F: Scalar> {
    pub arch: ArchitectureConfig,
    pub shared: Trunk<F>,
    pub task_branch: Branch<F>,
    pub domain_branch: Branch<F>,
    pub toi_head: Linear<F>,
    pub irt_head: Linear<F>,
    pub domain_head: Linear<F>,
}

/// Deterministically initialize a model. Component sub-seeds are derived
/// from `seed`, so equal (config, seed) pairs give bit-identical parameters.
/// With the ResNet split the two branches draw from identical streams and
/// start as exact copies of each other; the small CNN branches are
/// independently parameterized.
pub fn build_model<F: Scalar>(arch: &ArchitectureConfig, seed: u64) -> Result<ModelBundle<F>> {
    arch.validate()?;
    let stream_rng = |stream: u64| {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        InitRng::from_rng(rng)
    };

    let (shared, task_branch, domain_branch, branch_out) = match arch.backbone {
        Backbone::SmallCnn => {
            let mut rng = stream_rng(0);
            let pool = Some(MaxPool2d::ceil2x2());
            let mut blocks = Vec::new();
            let mut c_in = 3;
            for (i, &c_out) in arch.conv_channels_g.iter().enumerate() {
                blocks.push(ConvBlock::new(&format!("shared.b{i}"), c_in, c_out, pool, &mut rng));
                c_in = c_out;
            }
            let trunk_out = c_in;
            let mk_branch = |name: &str, stream: u64| {
                let mut rng = stream_rng(stream);
                let mut blocks = Vec::new();
                let mut c_in = trunk_out;
                for (i, &c_out) in arch.conv_channels_branch.iter().enumerate() {
                    blocks.push(ConvBlock::new(&format!("{name}.b{i}"), c_in, c_out, pool, &mut rng));
                    c_in = c_out;
                }
                Branch::Small(blocks)
            };
            (
                Trunk::Small(blocks),
                mk_branch("task_branch", 1),
                mk_branch("domain_branch", 2),
                *arch.conv_channels_branch.last().unwrap(),
            )
        }
        Backbone::PretrainedResnet50Split => {
            let mut rng = stream_rng(0);
            let trunk = Trunk::Resnet(ResnetTrunk::new(&mut rng));
            // both branches draw the same stream: stage 4 is copied into two
            // identically initialized parts
            let mk_branch = |name: &str| {
                let mut rng = stream_rng(1);
                Branch::Resnet(resnet_stage(
                    &format!("{name}.stage4"),
                    1024,
                    512,
                    2048,
                    3,
                    2,
                    &mut rng,
                ))
            };
            (trunk, mk_branch("task_branch"), mk_branch("domain_branch"), 2048)
        }
    };

    let (m_f, m_d) = arch.embedding_dims;
    debug_assert_eq!(m_f, branch_out);
    let (n_toi, n_irt) = arch.head_class_counts;
    let toi_head = Linear::new("toi_head", m_f, n_toi, &mut stream_rng(3));
    let irt_head = Linear::new("irt_head", m_f, n_irt, &mut stream_rng(4));
    let domain_head = Linear::new("domain_head", m_d, 1, &mut stream_rng(5));

    Ok(ModelBundle {
        arch: arch.clone(),
        shared,
        task_branch,
        domain_branch,
        toi_head,
        irt_head,
        domain_head,
    })
}

impl<F: Scalar> ModelBundle<F> {
    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = Vec::new();
        self.shared.collect_params(&mut out);
        self.task_branch.collect_params(&mut out);
        self.domain_branch.collect_params(&mut out);
        self.toi_head.collect_params(&mut out);
        self.irt_head.collect_params(&mut out);
        self.domain_head.collect_params(&mut out);
        out
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut out = Vec::new();
        self.shared.param_refs(&mut out);
        self.task_branch.param_refs(&mut out);
        self.domain_branch.param_refs(&mut out);
        self.toi_head.param_refs(&mut out);
        self.irt_head.param_refs(&mut out);
        self.domain_head.param_refs(&mut out);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Array1<F>)> {
        let mut out = Vec::new();
        self.shared.collect_buffers(&mut out);
        self.task_branch.collect_buffers(&mut out);
        self.domain_branch.collect_buffers(&mut out);
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Array1<F>)> {
        let mut out = Vec::new();
        self.shared.buffer_refs(&mut out);
        self.task_branch.buffer_refs(&mut out);
        self.domain_branch.buffer_refs(&mut out);
        out
    }

    /// Total trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Inference pass (running-stats batch norm): task-of-interest logits,
    /// irrelevant-task logits, domain probabilities. The reversal layer is
    /// the identity on values, so it does not appear in this computation.
    pub fn forward_all(
        &self,
        _grl: &GradientReversal,
        batch: &Array4<F>,
    ) -> (Array2<F>, Array2<F>, Array1<F>) {
        let h = self.shared.forward_eval(batch);
        let ef = self.task_branch.forward_eval(&h);
        let (toi_logits, _) = self.toi_head.forward(&ef);
        let (irt_logits, _) = self.irt_head.forward(&ef);
        let ed = self.domain_branch.forward_eval(&h);
        let (dz, _) = self.domain_head.forward(&ed);
        let probs = dz.column(0).mapv(crate::loss::sigmoid);
        (toi_logits, irt_logits, probs)
    }

    /// Inference-mode embedding from one branch.
    pub fn embed_eval(&self, sel: BranchSel, batch: &Array4<F>) -> Array2<F> {
        let h = self.shared.forward_eval(batch);
        match sel {
            BranchSel::Task => self.task_branch.forward_eval(&h),
            BranchSel::Domain => self.domain_branch.forward_eval(&h),
        }
    }

    /// Heads forward helper used by training code.
    pub fn head(&self, which: Head) -> &Linear<F> {
        match which {
            Head::Toi => &self.toi_head,
            Head::Irt => &self.irt_head,
            Head::Domain => &self.domain_head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Toi,
    Irt,
    Domain,
}

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, TrainerState};

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn tiny_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            backbone: Backbone::SmallCnn,
            conv_channels_g: vec![2, 3, 3],
            conv_channels_branch: vec![3, 3, 4],
            embedding_dims: (4, 4),
            input_shape: (8, 8, 3),
            head_class_counts: (3, 2),
        }
    }

    fn batch(n: usize, seed: u64) -> Array4<f64> {
        Array4::from_shape_fn((n, 3, 8, 8), |(b, c, i, j)| {
            ((b as u64 * 97 + c as u64 * 31 + i as u64 * 13 + j as u64 * 7 + seed) % 101) as f64
                / 101.0
        })
    }

    #[test]
    fn forward_all_shape_contract() {
        let mb = build_model::<f64>(&tiny_arch(), 0).unwrap();
        let grl = GradientReversal::new(1.0).unwrap();
        let (toi, irt, probs) = mb.forward_all(&grl, &batch(4, 0));
        assert_eq!(toi.dim(), (4, 3));
        assert_eq!(irt.dim(), (4, 2));
        assert_eq!(probs.len(), 4);
    }

    #[test]
    fn grl_backward_examples() {
        let g1 = GradientReversal::new(1.0).unwrap();
        assert_eq!(grl_backward(&g1, &[1.0, -2.0]), vec![-1.0, 2.0]);
        let g05 = GradientReversal::new(0.5).unwrap();
        assert_eq!(grl_backward(&g05, &[4.0]), vec![-2.0]);
        let g0 = GradientReversal::new(0.0).unwrap();
        assert_eq!(grl_backward(&g0, &[3.0, -7.0, 0.5]), vec![0.0, 0.0, -0.0]);
        assert!(GradientReversal::new(-0.1).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_model::<f64>(&tiny_arch(), 7).unwrap();
        let b = build_model::<f64>(&tiny_arch(), 7).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value, pb.value);
        }
        let c = build_model::<f64>(&tiny_arch(), 8).unwrap();
        let differs = a
            .params()
            .iter()
            .zip(c.params())
            .any(|(pa, pc)| pa.value != pc.value);
        assert!(differs, "different seeds must give different parameters");
    }

    #[test]
    fn small_cnn_has_three_blocks_everywhere() {
        let mb = build_model::<f32>(&tiny_arch(), 0).unwrap();
        match &mb.shared {
            Trunk::Small(blocks) => assert_eq!(blocks.len(), 3),
            _ => panic!("expected small trunk"),
        }
        match &mb.task_branch {
            Branch::Small(blocks) => assert_eq!(blocks.len(), 3),
            _ => panic!("expected small branch"),
        }
        // independently parameterized branches
        let mut tb = Vec::new();
        let mut db = Vec::new();
        mb.task_branch.param_refs(&mut tb);
        mb.domain_branch.param_refs(&mut db);
        let identical = tb.iter().zip(&db).all(|(a, b)| a.value == b.value);
        assert!(!identical, "small CNN branches must not share initial values");
    }

    #[test]
    fn domain_probability_is_strictly_bounded() {
        let mb = build_model::<f64>(&tiny_arch(), 3).unwrap();
        let grl = GradientReversal::new(1.0).unwrap();
        for trial in 0..10 {
            let (_, _, probs) = mb.forward_all(&grl, &batch(100, trial));
            for &p in probs.iter() {
                assert!(p > 0.0 && p < 1.0, "domain probability {p} must be in (0,1)");
            }
        }
    }

    #[test]
    fn branch_independence() {
        // perturbing the domain branch must not change task logits, and
        // vice versa
        let arch = tiny_arch();
        let grl = GradientReversal::new(1.0).unwrap();
        let x = batch(3, 1);
        let mb0 = build_model::<f64>(&arch, 0).unwrap();
        let (toi0, _, probs0) = mb0.forward_all(&grl, &x);

        let mut mb1 = mb0.clone();
        {
            let mut ps = Vec::new();
            mb1.domain_branch.collect_params(&mut ps);
            for p in ps {
                p.value.mapv_inplace(|v| v + 0.37);
            }
        }
        let (toi1, _, probs1) = mb1.forward_all(&grl, &x);
        assert_eq!(toi0, toi1, "task logits must ignore domain-branch params");
        assert_ne!(probs0, probs1);

        let mut mb2 = mb0.clone();
        {
            let mut ps = Vec::new();
            mb2.task_branch.collect_params(&mut ps);
            for p in ps {
                p.value.mapv_inplace(|v| v + 0.37);
            }
        }
        let (toi2, _, probs2) = mb2.forward_all(&grl, &x);
        assert_eq!(probs0, probs2, "domain probs must ignore task-branch params");
        assert_ne!(toi0, toi2);
    }

    #[test]
    fn resnet_split_branches_start_identical() {
        let arch = ArchitectureConfig::resnet50_split((64, 64), (5, 7));
        let mb = build_model::<f32>(&arch, 0).unwrap();
        let mut tb = Vec::new();
        let mut db = Vec::new();
        mb.task_branch.param_refs(&mut tb);
        mb.domain_branch.param_refs(&mut db);
        assert!(!tb.is_empty());
        for (a, b) in tb.iter().zip(&db) {
            assert_eq!(a.value, b.value, "{} vs {}", a.name, b.name);
        }
        // shape sanity on a small input
        let grl = GradientReversal::new(1.0).unwrap();
        let x = Array4::<f32>::zeros((1, 3, 64, 64));
        let (toi, irt, probs) = mb.forward_all(&grl, &x);
        assert_eq!(toi.dim(), (1, 5));
        assert_eq!(irt.dim(), (1, 7));
        assert_eq!(probs.len(), 1);
    }
}
