//! Generator and critic construction, progressive growth, and fade-in.
//!
//! Both networks are mirror images built from the same channel plan:
//!
//! ```text
//! level      0        1        2        3        4
//! resolution 4x4      8x8      16x16    32x32    64x64
//! channels   256      128      64       32       16
//! ```
//!
//! The generator starts from a pixel-normalized latent, maps it to a 4x4
//! trunk with a full-overlap transposed 4x4 convolution, and each growth
//! level prepends an upsample to two 3x3 convolution units. The critic reads
//! RGB through a 1x1 convolution, runs the mirrored blocks with a downsample
//! after each, appends the minibatch standard-deviation channel, and scores
//! through 3x3 -> 4x4 -> 1x1 convolutions to a single number.
//!
//! While a freshly added level fades in (`alpha < 1`), the previous level's
//! RGB layer stays wired as a parallel path and the two are blended linearly.

use crate::nn::{ConvKind, ConvUnit, EqualizedConv, Parameter, PIXELNORM_EPS};
use crate::nn::{minibatch_stddev, pixelnorm};
use crate::rng::Rng;
use crate::tensor::{Real, Tape, TensorError, Var};

/// Side length at a progress level.
pub fn resolution(level: usize) -> usize {
    4 << level
}

/// Channel schedule shared by both networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkPlan {
    /// Trunk channels per level, lowest resolution first.
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub rgb_channels: usize,
}

impl NetworkPlan {
    /// The default 4x4..64x64 plan.
    pub fn standard() -> Self {
        NetworkPlan {
            channels: vec![256, 128, 64, 32, 16],
            latent_dim: 256,
            rgb_channels: 3,
        }
    }

    pub fn with_latent_dim(latent_dim: usize) -> Self {
        NetworkPlan {
            latent_dim,
            ..Self::standard()
        }
    }

    pub fn max_level(&self) -> usize {
        self.channels.len() - 1
    }

    fn check_level(&self, level: usize, op: &'static str) -> Result<(), TensorError> {
        if level > self.max_level() {
            return Err(TensorError::InvalidArg {
                op,
                detail: format!("level {level} exceeds plan maximum {}", self.max_level()),
            });
        }
        Ok(())
    }
}

/// Where training currently sits: resolution level plus fade-in blend.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhaseState {
    pub level: usize,
    /// 1 means the top block is fully active; level 0 is always 1.
    pub alpha: f64,
    pub epoch_in_phase: u64,
}

impl PhaseState {
    pub fn stable(level: usize) -> Self {
        PhaseState {
            level,
            alpha: 1.0,
            epoch_in_phase: 0,
        }
    }

    pub fn new(level: usize, alpha: f64, epoch_in_phase: u64) -> Result<Self, TensorError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(TensorError::InvalidArg {
                op: "PhaseState",
                detail: format!("alpha {alpha} outside [0, 1]"),
            });
        }
        if level == 0 && alpha != 1.0 {
            return Err(TensorError::InvalidArg {
                op: "PhaseState",
                detail: "level 0 has nothing to fade; alpha must be 1".into(),
            });
        }
        Ok(PhaseState {
            level,
            alpha,
            epoch_in_phase,
        })
    }

    pub fn resolution(&self) -> usize {
        resolution(self.level)
    }

    pub fn fading(&self) -> bool {
        self.alpha < 1.0
    }
}

/// Name and shape of one intermediate tensor (for conformance checks).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn trace(out: &mut Option<&mut Vec<TraceEntry>>, name: &str, shape: Vec<usize>) {
    if let Some(t) = out.as_deref_mut() {
        t.push(TraceEntry {
            name: name.to_string(),
            shape,
        });
    }
}

struct GenBlock<E> {
    conv0: ConvUnit<E>,
    conv1: ConvUnit<E>,
}

impl<E: Real> GenBlock<E> {
    /// Level 0: transposed 4x4 from the latent, then a 3x3. Level >= 1: two
    /// 3x3 units at the level's channel count (the upsample lives in the
    /// forward pass).
    fn new(plan: &NetworkPlan, level: usize, rng: &mut Rng) -> Self {
        let ch = plan.channels[level];
        let (kind0, kernel0, in0) = if level == 0 {
            (ConvKind::TransposedFull, 4, plan.latent_dim)
        } else {
            (
                ConvKind::Standard { padding: 1 },
                3,
                plan.channels[level - 1],
            )
        };
        GenBlock {
            conv0: ConvUnit {
                conv: EqualizedConv::new(
                    &format!("G.block{level}.conv0"),
                    kernel0,
                    in0,
                    ch,
                    kind0,
                    rng,
                ),
                activation: true,
                pixelnorm: true,
            },
            conv1: ConvUnit {
                conv: EqualizedConv::new(
                    &format!("G.block{level}.conv1"),
                    3,
                    ch,
                    ch,
                    ConvKind::Standard { padding: 1 },
                    rng,
                ),
                activation: true,
                pixelnorm: true,
            },
        }
    }
}

/// Progressive generator at a fixed level.
pub struct Generator<E> {
    plan: NetworkPlan,
    level: usize,
    blocks: Vec<GenBlock<E>>,
    to_rgb: Vec<EqualizedConv<E>>,
}

fn to_rgb_layer<E: Real>(plan: &NetworkPlan, level: usize, rng: &mut Rng) -> EqualizedConv<E> {
    EqualizedConv::new(
        &format!("G.to_rgb{level}"),
        1,
        plan.channels[level],
        plan.rgb_channels,
        ConvKind::Standard { padding: 0 },
        rng,
    )
}

fn from_rgb_layer<E: Real>(plan: &NetworkPlan, level: usize, rng: &mut Rng) -> EqualizedConv<E> {
    EqualizedConv::new(
        &format!("D.from_rgb{level}"),
        1,
        plan.rgb_channels,
        plan.channels[level],
        ConvKind::Standard { padding: 0 },
        rng,
    )
}

impl<E: Real> Generator<E> {
    /// Builds the generator with blocks up to `level`.
    pub fn build(plan: &NetworkPlan, level: usize, rng: &mut Rng) -> Result<Self, TensorError> {
        plan.check_level(level, "build_generator")?;
        let mut blocks = Vec::new();
        let mut to_rgb = Vec::new();
        for l in 0..=level {
            blocks.push(GenBlock::new(plan, l, rng));
            to_rgb.push(to_rgb_layer(plan, l, rng));
        }
        Ok(Generator {
            plan: plan.clone(),
            level,
            blocks,
            to_rgb,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn plan(&self) -> &NetworkPlan {
        &self.plan
    }

    /// Returns a one-level-deeper generator. Existing parameters keep their
    /// exact values; only the new block and its RGB layer are freshly drawn.
    /// The previous RGB layer stays as the fade path.
    pub fn grow(&self, rng: &mut Rng) -> Result<Self, TensorError>
    where
        E: Clone,
    {
        let new_level = self.level + 1;
        self.plan.check_level(new_level, "grow")?;
        let mut blocks: Vec<GenBlock<E>> = self
            .blocks
            .iter()
            .map(|b| GenBlock {
                conv0: b.conv0.clone(),
                conv1: b.conv1.clone(),
            })
            .collect();
        let mut to_rgb = self.to_rgb.clone();
        blocks.push(GenBlock::new(&self.plan, new_level, rng));
        to_rgb.push(to_rgb_layer(&self.plan, new_level, rng));
        Ok(Generator {
            plan: self.plan.clone(),
            level: new_level,
            blocks,
            to_rgb,
        })
    }

    /// Parameters in a stable order that growth only appends to.
    pub fn parameters(&self) -> Vec<&Parameter<E>> {
        let mut out = Vec::new();
        for l in 0..=self.level {
            for p in self.blocks[l].conv0.conv.parameters() {
                out.push(p);
            }
            for p in self.blocks[l].conv1.conv.parameters() {
                out.push(p);
            }
            for p in self.to_rgb[l].parameters() {
                out.push(p);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<E>> {
        let mut out = Vec::new();
        for (block, rgb) in self.blocks.iter_mut().zip(self.to_rgb.iter_mut()) {
            for p in block.conv0.conv.parameters_mut() {
                out.push(p);
            }
            for p in block.conv1.conv.parameters_mut() {
                out.push(p);
            }
            for p in rgb.parameters_mut() {
                out.push(p);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.numel()).sum()
    }

    pub fn bind(&self, tape: &Tape<E>, trainable: bool) -> Result<BoundGenerator<E>, TensorError> {
        let mut blocks = Vec::new();
        let mut to_rgb = Vec::new();
        let mut bindings = Vec::new();
        for l in 0..=self.level {
            let b0 = self.blocks[l].conv0.bind(tape, trainable)?;
            let b1 = self.blocks[l].conv1.bind(tape, trainable)?;
            let rgb = self.to_rgb[l].bind(tape, trainable)?;
            for (unit, conv) in [
                (&self.blocks[l].conv0, &b0.conv),
                (&self.blocks[l].conv1, &b1.conv),
            ] {
                let [w, b] = conv.leaves();
                bindings.push((unit.conv.weight.name.clone(), w.clone()));
                bindings.push((unit.conv.bias.name.clone(), b.clone()));
            }
            let [w, b] = rgb.leaves();
            bindings.push((self.to_rgb[l].weight.name.clone(), w.clone()));
            bindings.push((self.to_rgb[l].bias.name.clone(), b.clone()));
            blocks.push((b0, b1));
            to_rgb.push(rgb);
        }
        Ok(BoundGenerator {
            level: self.level,
            latent_dim: self.plan.latent_dim,
            blocks,
            to_rgb,
            bindings,
        })
    }
}

/// Tape-bound generator ready for forward evaluation.
pub struct BoundGenerator<E: Real> {
    level: usize,
    latent_dim: usize,
    blocks: Vec<(crate::nn::BoundConvUnit<E>, crate::nn::BoundConvUnit<E>)>,
    to_rgb: Vec<crate::nn::BoundConv<E>>,
    bindings: Vec<(String, Var<E>)>,
}

impl<E: Real> BoundGenerator<E> {
    /// `(name, leaf)` pairs for every bound parameter.
    pub fn bindings(&self) -> &[(String, Var<E>)] {
        &self.bindings
    }

    pub fn forward(&self, z: &Var<E>, phase: &PhaseState) -> Result<Var<E>, TensorError> {
        self.forward_impl(z, phase, &mut None)
    }

    pub fn forward_traced(
        &self,
        z: &Var<E>,
        phase: &PhaseState,
        out: &mut Vec<TraceEntry>,
    ) -> Result<Var<E>, TensorError> {
        self.forward_impl(z, phase, &mut Some(out))
    }

    fn forward_impl(
        &self,
        z: &Var<E>,
        phase: &PhaseState,
        tr: &mut Option<&mut Vec<TraceEntry>>,
    ) -> Result<Var<E>, TensorError> {
        let zs = z.shape();
        if zs.len() != 4 || zs[1] != 1 || zs[2] != 1 || zs[3] != self.latent_dim {
            return Err(TensorError::ShapeMismatch {
                op: "generator_forward",
                detail: format!("latent shape {zs:?}, expected [n, 1, 1, {}]", self.latent_dim),
            });
        }
        if phase.level != self.level {
            return Err(TensorError::InvalidArg {
                op: "generator_forward",
                detail: format!("phase level {} vs network level {}", phase.level, self.level),
            });
        }
        trace(tr, "input", zs);

        let mut h = pixelnorm(z, PIXELNORM_EPS)?;
        let mut below_rgb = None;
        for l in 0..=self.level {
            if l > 0 {
                if l == self.level && phase.fading() {
                    // fade path taps the trunk before the new top block
                    below_rgb = Some(self.to_rgb[l - 1].apply(&h)?);
                }
                h = h.upsample_nearest_2x()?;
            }
            let (b0, b1) = &self.blocks[l];
            h = b0.apply(&h)?;
            trace(tr, &format!("block{l}.conv0"), h.shape());
            h = b1.apply(&h)?;
            trace(tr, &format!("block{l}.conv1"), h.shape());
        }

        let top = self.to_rgb[self.level].apply(&h)?;
        let out = match below_rgb {
            Some(below) => {
                let low = below.upsample_nearest_2x()?.scale(1.0 - phase.alpha)?;
                low.add(&top.scale(phase.alpha)?)?
            }
            None => top,
        };
        trace(tr, "to_rgb", out.shape());
        Ok(out)
    }
}

struct DiscBlock<E> {
    conv0: ConvUnit<E>,
    conv1: ConvUnit<E>,
}

impl<E: Real> DiscBlock<E> {
    /// Level >= 1 block: 3x3 at the level's channels, then 3x3 doubling to
    /// the next-lower level's channels (the downsample lives in the forward
    /// pass).
    fn new(plan: &NetworkPlan, level: usize, rng: &mut Rng) -> Self {
        let ch = plan.channels[level];
        let out = plan.channels[level - 1];
        DiscBlock {
            conv0: ConvUnit {
                conv: EqualizedConv::new(
                    &format!("D.block{level}.conv0"),
                    3,
                    ch,
                    ch,
                    ConvKind::Standard { padding: 1 },
                    rng,
                ),
                activation: true,
                pixelnorm: false,
            },
            conv1: ConvUnit {
                conv: EqualizedConv::new(
                    &format!("D.block{level}.conv1"),
                    3,
                    ch,
                    out,
                    ConvKind::Standard { padding: 1 },
                    rng,
                ),
                activation: true,
                pixelnorm: false,
            },
        }
    }
}

struct CostBlock<E> {
    conv0: ConvUnit<E>,
    conv1: ConvUnit<E>,
    conv2: ConvUnit<E>,
}

impl<E: Real> CostBlock<E> {
    fn new(plan: &NetworkPlan, rng: &mut Rng) -> Self {
        let ch = plan.channels[0];
        CostBlock {
            // +1 input channel for the appended minibatch statistic
            conv0: ConvUnit {
                conv: EqualizedConv::new(
                    "D.cost.conv0",
                    3,
                    ch + 1,
                    ch,
                    ConvKind::Standard { padding: 1 },
                    rng,
                ),
                activation: true,
                pixelnorm: false,
            },
            conv1: ConvUnit {
                conv: EqualizedConv::new(
                    "D.cost.conv1",
                    4,
                    ch,
                    ch,
                    ConvKind::Standard { padding: 0 },
                    rng,
                ),
                activation: true,
                pixelnorm: false,
            },
            conv2: ConvUnit {
                conv: EqualizedConv::new(
                    "D.cost.conv2",
                    1,
                    ch,
                    1,
                    ConvKind::Standard { padding: 0 },
                    rng,
                ),
                activation: false,
                pixelnorm: false,
            },
        }
    }
}

/// Progressive critic at a fixed level.
pub struct Discriminator<E> {
    plan: NetworkPlan,
    level: usize,
    from_rgb: Vec<EqualizedConv<E>>,
    /// `blocks[l]` belongs to level `l + 1`.
    blocks: Vec<DiscBlock<E>>,
    cost: CostBlock<E>,
}

impl<E: Real> Discriminator<E> {
    pub fn build(plan: &NetworkPlan, level: usize, rng: &mut Rng) -> Result<Self, TensorError> {
        plan.check_level(level, "build_discriminator")?;
        let mut from_rgb = vec![from_rgb_layer(plan, 0, rng)];
        let cost = CostBlock::new(plan, rng);
        let mut blocks = Vec::new();
        for l in 1..=level {
            from_rgb.push(from_rgb_layer(plan, l, rng));
            blocks.push(DiscBlock::new(plan, l, rng));
        }
        Ok(Discriminator {
            plan: plan.clone(),
            level,
            from_rgb,
            blocks,
            cost,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn plan(&self) -> &NetworkPlan {
        &self.plan
    }

    pub fn grow(&self, rng: &mut Rng) -> Result<Self, TensorError> {
        let new_level = self.level + 1;
        self.plan.check_level(new_level, "grow")?;
        let mut from_rgb = self.from_rgb.clone();
        let mut blocks: Vec<DiscBlock<E>> = self
            .blocks
            .iter()
            .map(|b| DiscBlock {
                conv0: b.conv0.clone(),
                conv1: b.conv1.clone(),
            })
            .collect();
        from_rgb.push(from_rgb_layer(&self.plan, new_level, rng));
        blocks.push(DiscBlock::new(&self.plan, new_level, rng));
        Ok(Discriminator {
            plan: self.plan.clone(),
            level: new_level,
            from_rgb,
            blocks,
            cost: CostBlock {
                conv0: self.cost.conv0.clone(),
                conv1: self.cost.conv1.clone(),
                conv2: self.cost.conv2.clone(),
            },
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter<E>> {
        let mut out = Vec::new();
        for p in self.from_rgb[0].parameters() {
            out.push(p);
        }
        for unit in [&self.cost.conv0, &self.cost.conv1, &self.cost.conv2] {
            for p in unit.conv.parameters() {
                out.push(p);
            }
        }
        for l in 1..=self.level {
            for p in self.from_rgb[l].parameters() {
                out.push(p);
            }
            for p in self.blocks[l - 1].conv0.conv.parameters() {
                out.push(p);
            }
            for p in self.blocks[l - 1].conv1.conv.parameters() {
                out.push(p);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<E>> {
        let mut out: Vec<&mut Parameter<E>> = Vec::new();
        let (first_rgb, rest_rgb) = self.from_rgb.split_first_mut().expect("from_rgb0");
        for p in first_rgb.parameters_mut() {
            out.push(p);
        }
        for unit in [
            &mut self.cost.conv0,
            &mut self.cost.conv1,
            &mut self.cost.conv2,
        ] {
            for p in unit.conv.parameters_mut() {
                out.push(p);
            }
        }
        for (rgb, block) in rest_rgb.iter_mut().zip(self.blocks.iter_mut()) {
            for p in rgb.parameters_mut() {
                out.push(p);
            }
            for p in block.conv0.conv.parameters_mut() {
                out.push(p);
            }
            for p in block.conv1.conv.parameters_mut() {
                out.push(p);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.numel()).sum()
    }

    pub fn bind(
        &self,
        tape: &Tape<E>,
        trainable: bool,
    ) -> Result<BoundDiscriminator<E>, TensorError> {
        let mut bindings = Vec::new();
        let bind_unit = |unit: &ConvUnit<E>,
                             bindings: &mut Vec<(String, Var<E>)>|
         -> Result<crate::nn::BoundConvUnit<E>, TensorError> {
            let bound = unit.bind(tape, trainable)?;
            let [w, b] = bound.conv.leaves();
            bindings.push((unit.conv.weight.name.clone(), w.clone()));
            bindings.push((unit.conv.bias.name.clone(), b.clone()));
            Ok(bound)
        };
        let mut from_rgb = Vec::new();
        for layer in &self.from_rgb {
            let bound = layer.bind(tape, trainable)?;
            let [w, b] = bound.leaves();
            bindings.push((layer.weight.name.clone(), w.clone()));
            bindings.push((layer.bias.name.clone(), b.clone()));
            from_rgb.push(bound);
        }
        let mut blocks = Vec::new();
        for block in &self.blocks {
            let b0 = bind_unit(&block.conv0, &mut bindings)?;
            let b1 = bind_unit(&block.conv1, &mut bindings)?;
            blocks.push((b0, b1));
        }
        let cost = (
            bind_unit(&self.cost.conv0, &mut bindings)?,
            bind_unit(&self.cost.conv1, &mut bindings)?,
            bind_unit(&self.cost.conv2, &mut bindings)?,
        );
        Ok(BoundDiscriminator {
            level: self.level,
            rgb_channels: self.plan.rgb_channels,
            from_rgb,
            blocks,
            cost,
            bindings,
        })
    }
}

/// Tape-bound critic ready for forward evaluation.
pub struct BoundDiscriminator<E: Real> {
    level: usize,
    rgb_channels: usize,
    from_rgb: Vec<crate::nn::BoundConv<E>>,
    blocks: Vec<(crate::nn::BoundConvUnit<E>, crate::nn::BoundConvUnit<E>)>,
    cost: (
        crate::nn::BoundConvUnit<E>,
        crate::nn::BoundConvUnit<E>,
        crate::nn::BoundConvUnit<E>,
    ),
    bindings: Vec<(String, Var<E>)>,
}

impl<E: Real> BoundDiscriminator<E> {
    pub fn bindings(&self) -> &[(String, Var<E>)] {
        &self.bindings
    }

    /// Scores an image batch; output shape `[n, 1, 1, 1]`.
    pub fn forward(&self, x: &Var<E>, phase: &PhaseState) -> Result<Var<E>, TensorError> {
        self.forward_impl(x, phase, &mut None)
    }

    pub fn forward_traced(
        &self,
        x: &Var<E>,
        phase: &PhaseState,
        out: &mut Vec<TraceEntry>,
    ) -> Result<Var<E>, TensorError> {
        self.forward_impl(x, phase, &mut Some(out))
    }

    fn run_block(
        &self,
        l: usize,
        h: Var<E>,
        tr: &mut Option<&mut Vec<TraceEntry>>,
    ) -> Result<Var<E>, TensorError> {
        let (b0, b1) = &self.blocks[l - 1];
        let h = b0.apply(&h)?;
        trace(tr, &format!("block{l}.conv0"), h.shape());
        let h = b1.apply(&h)?;
        trace(tr, &format!("block{l}.conv1"), h.shape());
        h.downsample_avg_2x()
    }

    fn forward_impl(
        &self,
        x: &Var<E>,
        phase: &PhaseState,
        tr: &mut Option<&mut Vec<TraceEntry>>,
    ) -> Result<Var<E>, TensorError> {
        let xs = x.shape();
        let want = resolution(self.level);
        if xs.len() != 4 || xs[1] != want || xs[2] != want || xs[3] != self.rgb_channels {
            return Err(TensorError::ShapeMismatch {
                op: "discriminator_forward",
                detail: format!(
                    "input {xs:?}, expected [n, {want}, {want}, {}]",
                    self.rgb_channels
                ),
            });
        }
        if phase.level != self.level {
            return Err(TensorError::InvalidArg {
                op: "discriminator_forward",
                detail: format!("phase level {} vs network level {}", phase.level, self.level),
            });
        }
        trace(tr, "input", xs);

        let mut h;
        let mut next = self.level;
        if self.level >= 1 {
            let top = self.from_rgb[self.level].apply(x)?;
            trace(tr, "from_rgb", top.shape());
            let top = self.run_block(self.level, top, tr)?;
            h = if phase.fading() {
                let below = self.from_rgb[self.level - 1].apply(&x.downsample_avg_2x()?)?;
                top.scale(phase.alpha)?
                    .add(&below.scale(1.0 - phase.alpha)?)?
            } else {
                top
            };
            next = self.level - 1;
        } else {
            h = self.from_rgb[0].apply(x)?;
            trace(tr, "from_rgb", h.shape());
        }
        while next >= 1 {
            h = self.run_block(next, h, tr)?;
            next -= 1;
        }

        let h = minibatch_stddev(&h)?;
        trace(tr, "minibatch_stddev", h.shape());
        let h = self.cost.0.apply(&h)?;
        trace(tr, "cost.conv0", h.shape());
        let h = self.cost.1.apply(&h)?;
        trace(tr, "cost.conv1", h.shape());
        let h = self.cost.2.apply(&h)?;
        trace(tr, "cost.conv2", h.shape());
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rng() -> Rng {
        Rng::seed_from_u64(1234)
    }

    fn latents(n: usize, dim: usize, rng: &mut Rng) -> Tensor<f64> {
        Tensor::randn(vec![n, 1, 1, dim], rng)
    }

    #[test]
    fn generator_output_shapes_per_level() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        for (level, res) in [(0usize, 4usize), (2, 16), (4, 64)] {
            let g = Generator::<f64>::build(&plan, level, &mut r).unwrap();
            let tape = Tape::new();
            let z = tape.leaf(&latents(2, 256, &mut r), false).unwrap();
            let out = g
                .bind(&tape, false)
                .unwrap()
                .forward(&z, &PhaseState::stable(level))
                .unwrap();
            assert_eq!(out.shape(), &[2, res, res, 3]);
        }
    }

    #[test]
    fn generator_trunk_shapes_match_channel_plan() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let g = Generator::<f64>::build(&plan, 2, &mut r).unwrap();
        let tape = Tape::new();
        let z = tape.leaf(&latents(1, 256, &mut r), false).unwrap();
        let mut tr = Vec::new();
        g.bind(&tape, false)
            .unwrap()
            .forward_traced(&z, &PhaseState::stable(2), &mut tr)
            .unwrap();
        let find = |name: &str| {
            tr.iter()
                .find(|e| e.name == name)
                .unwrap_or_else(|| panic!("missing {name}"))
                .shape
                .clone()
        };
        assert_eq!(find("block0.conv0"), vec![1, 4, 4, 256]);
        assert_eq!(find("block1.conv1"), vec![1, 8, 8, 128]);
        assert_eq!(find("block2.conv1"), vec![1, 16, 16, 64]);
        assert_eq!(find("to_rgb"), vec![1, 16, 16, 3]);
    }

    #[test]
    fn discriminator_shapes_mirror_generator() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let d = Discriminator::<f64>::build(&plan, 4, &mut r).unwrap();
        let tape = Tape::new();
        let x = tape
            .leaf(&Tensor::randn(vec![2, 64, 64, 3], &mut r), false)
            .unwrap();
        let mut tr = Vec::new();
        let score = d
            .bind(&tape, false)
            .unwrap()
            .forward_traced(&x, &PhaseState::stable(4), &mut tr)
            .unwrap();
        assert_eq!(score.shape(), &[2, 1, 1, 1]);
        let find = |name: &str| {
            tr.iter()
                .find(|e| e.name == name)
                .unwrap_or_else(|| panic!("missing {name}"))
                .shape
                .clone()
        };
        assert_eq!(find("from_rgb"), vec![2, 64, 64, 16]);
        assert_eq!(find("block4.conv0"), vec![2, 64, 64, 16]);
        assert_eq!(find("block4.conv1"), vec![2, 64, 64, 32]);
        assert_eq!(find("block1.conv1"), vec![2, 8, 8, 256]);
        assert_eq!(find("minibatch_stddev"), vec![2, 4, 4, 257]);
        assert_eq!(find("cost.conv0"), vec![2, 4, 4, 256]);
        assert_eq!(find("cost.conv1"), vec![2, 1, 1, 256]);
        assert_eq!(find("cost.conv2"), vec![2, 1, 1, 1]);
    }

    #[test]
    fn level_zero_discriminator_scores_batch() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let d = Discriminator::<f64>::build(&plan, 0, &mut r).unwrap();
        let tape = Tape::new();
        let x = tape
            .leaf(&Tensor::randn(vec![5, 4, 4, 3], &mut r), false)
            .unwrap();
        let score = d
            .bind(&tape, false)
            .unwrap()
            .forward(&x, &PhaseState::stable(0))
            .unwrap();
        assert_eq!(score.shape(), &[5, 1, 1, 1]);
    }

    #[test]
    fn plans_are_mirror_images() {
        let plan = NetworkPlan::standard();
        // generator trunk channels at level l == critic trunk channels at
        // level l (the critic reads them in reverse order)
        for l in 0..=plan.max_level() {
            let g_out = plan.channels[l];
            let d_in = plan.channels[l];
            assert_eq!(g_out, d_in);
            assert_eq!(resolution(l), 4 * (1 << l));
        }
        assert_eq!(plan.channels.first(), Some(&256));
        assert_eq!(plan.channels.last(), Some(&16));
    }

    #[test]
    fn generator_fade_endpoints_and_midpoint() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let g0 = Generator::<f64>::build(&plan, 0, &mut r).unwrap();
        let g1 = g0.grow(&mut r).unwrap();
        let z = latents(3, 256, &mut r);

        let eval = |g: &Generator<f64>, phase: &PhaseState| {
            let tape = Tape::new();
            let zv = tape.leaf(&z, false).unwrap();
            g.bind(&tape, false)
                .unwrap()
                .forward(&zv, phase)
                .unwrap()
                .to_tensor()
        };

        let low = eval(&g0, &PhaseState::stable(0));
        let up_low = {
            let tape = Tape::new();
            let v = tape.leaf(&low, false).unwrap();
            v.upsample_nearest_2x().unwrap().to_tensor()
        };
        let at0 = eval(&g1, &PhaseState::new(1, 0.0, 0).unwrap());
        assert!(at0.max_abs_diff(&up_low) < 1e-6, "alpha=0 endpoint");

        let at1 = eval(&g1, &PhaseState::stable(1));
        let mid = eval(&g1, &PhaseState::new(1, 0.5, 0).unwrap());
        for i in 0..mid.numel() {
            let avg = 0.5 * (at0.data()[i] + at1.data()[i]);
            assert!((mid.data()[i] - avg).abs() < 1e-6);
        }
    }

    #[test]
    fn discriminator_fade_endpoints_and_continuity() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let d0 = Discriminator::<f64>::build(&plan, 1, &mut r).unwrap();
        let x = Tensor::randn(vec![2, 8, 8, 3], &mut r);

        let eval = |alpha: f64| {
            let tape = Tape::new();
            let xv = tape.leaf(&x, false).unwrap();
            d0.bind(&tape, false)
                .unwrap()
                .forward(&xv, &PhaseState::new(1, alpha, 0).unwrap())
                .unwrap()
                .to_tensor()
        };

        let s0 = eval(0.0);
        let s1 = eval(1.0);
        // alpha=1 is the pure top pipeline
        let pure = {
            let tape = Tape::new();
            let xv = tape.leaf(&x, false).unwrap();
            d0.bind(&tape, false)
                .unwrap()
                .forward(&xv, &PhaseState::stable(1))
                .unwrap()
                .to_tensor()
        };
        assert!(s1.max_abs_diff(&pure) < 1e-12);

        // Lipschitz in alpha with a constant estimated from endpoint spread
        let spread = s0.max_abs_diff(&s1);
        let k = 50.0 * (spread + 1.0);
        let h = 1e-3;
        for alpha in [0.0, 0.25, 0.5, 0.75] {
            let a = eval(alpha);
            let b = eval(alpha + h);
            assert!(
                a.max_abs_diff(&b) <= k * h,
                "alpha {alpha}: jump {} > {}",
                a.max_abs_diff(&b),
                k * h
            );
        }
    }

    #[test]
    fn growth_transfers_parameters_bitwise() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let g0 = Generator::<f32>::build(&plan, 0, &mut r).unwrap();
        let g1 = g0.grow(&mut r).unwrap();
        for p0 in g0.parameters() {
            let p1 = g1
                .parameters()
                .into_iter()
                .find(|p| p.name == p0.name)
                .expect("transferred parameter");
            assert_eq!(p0.value.shape(), p1.value.shape());
            assert!(p0
                .value
                .data()
                .iter()
                .zip(p1.value.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let d0 = Discriminator::<f32>::build(&plan, 2, &mut r).unwrap();
        let d1 = d0.grow(&mut r).unwrap();
        assert_eq!(d1.level(), 3);
        for p0 in d0.parameters() {
            let p1 = d1
                .parameters()
                .into_iter()
                .find(|p| p.name == p0.name)
                .expect("transferred parameter");
            assert!(p0
                .value
                .data()
                .iter()
                .zip(p1.value.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn growth_parameter_count_increase_is_closed_form() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let g3 = Generator::<f64>::build(&plan, 3, &mut r).unwrap();
        let g4 = g3.grow(&mut r).unwrap();
        // block 4: 3x3 conv 32->16 (+bias), 3x3 conv 16->16 (+bias); RGB 16->3 (+bias)
        let expected_g = (3 * 3 * 32 * 16 + 16) + (3 * 3 * 16 * 16 + 16) + (16 * 3 + 3);
        assert_eq!(g4.param_count() - g3.param_count(), expected_g);

        let d3 = Discriminator::<f64>::build(&plan, 3, &mut r).unwrap();
        let d4 = d3.grow(&mut r).unwrap();
        // RGB 3->16 (+bias); 3x3 conv 16->16 (+bias); 3x3 conv 16->32 (+bias)
        let expected_d = (3 * 16 + 16) + (3 * 3 * 16 * 16 + 16) + (3 * 3 * 16 * 32 + 32);
        assert_eq!(d4.param_count() - d3.param_count(), expected_d);
    }

    #[test]
    fn growth_rejects_exceeding_plan() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let g = Generator::<f64>::build(&plan, 4, &mut r).unwrap();
        assert!(g.grow(&mut r).is_err());
        assert!(Generator::<f64>::build(&plan, 5, &mut r).is_err());
    }

    #[test]
    fn phase_state_invariants() {
        assert!(PhaseState::new(0, 0.5, 0).is_err());
        assert!(PhaseState::new(1, 1.5, 0).is_err());
        assert!(PhaseState::new(1, 0.5, 0).is_ok());
        assert_eq!(PhaseState::stable(3).resolution(), 32);
    }

    #[test]
    fn forward_validates_phase_and_resolution() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let d = Discriminator::<f64>::build(&plan, 1, &mut r).unwrap();
        let tape = Tape::new();
        let wrong = tape
            .leaf(&Tensor::randn(vec![2, 4, 4, 3], &mut r), false)
            .unwrap();
        assert!(d
            .bind(&tape, false)
            .unwrap()
            .forward(&wrong, &PhaseState::stable(1))
            .is_err());

        let g = Generator::<f64>::build(&plan, 1, &mut r).unwrap();
        let z = tape.leaf(&latents(2, 256, &mut r), false).unwrap();
        assert!(g
            .bind(&tape, false)
            .unwrap()
            .forward(&z, &PhaseState::stable(0))
            .is_err());
    }

    #[test]
    fn full_critic_score_gradient_matches_differences() {
        // input gradient of the whole level-0 critic against central
        // differences, at the real channel plan in double precision
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let d = Discriminator::<f64>::build(&plan, 0, &mut r).unwrap();
        let x = Tensor::randn(vec![2, 4, 4, 3], &mut r);
        let report = crate::tensor::grad_check(
            |tape, v| {
                d.bind(tape, false)?
                    .forward(v, &PhaseState::stable(0))?
                    .sum_all()
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(report.within(1e-4), "{report:?}");
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let plan = NetworkPlan::standard();
        let mut r = rng();
        let g = Generator::<f64>::build(&plan, 4, &mut r).unwrap();
        let d = Discriminator::<f64>::build(&plan, 4, &mut r).unwrap();
        let mut names: Vec<&str> = g
            .parameters()
            .iter()
            .chain(d.parameters().iter())
            .map(|p| p.name.as_str())
            .collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total, "duplicate parameter names");
        assert!(names.contains(&"G.block1.conv0.weight"));
        assert!(names.contains(&"D.cost.conv2.bias"));
    }
}
