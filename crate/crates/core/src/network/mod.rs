//! The hierarchical multi-scale encoder-decoder and its building blocks.
//!
//! Layout for an H×W input (H, W divisible by 8), 16 channels throughout:
//!
//! ```text
//! stem 5×5 (1→16), ReLU
//! block 1: two-scale   at H      → pool → H/2
//! block 2: three-scale at H/2    → pool → H/4
//! block 3: two-scale   at H/4    → pool → H/8
//! upsample ×3 → H, each step averaged with the block output of that scale
//! head 1×1 (16→1)
//! ```
//!
//! Each block also emits its half-scale features, which are averaged into
//! the next block's input (the mid-level flow). The `baseline` variant
//! replaces the blocks with three full-resolution 5×5 convolutions.

mod graph;
mod params;

pub use graph::{ForwardTape, Graph, LayerKind, LayerSpec, NodeRef, TapeRecord};
pub use params::{Gradients, ParamEntry, ParamStore};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Array3, MaskedMap};

/// Feature width of every intermediate map.
pub const CHANNELS: usize = 16;
/// Half-width of the 5×5 convolutions.
pub const KERNEL_HALF: usize = 2;

/// Architecture variants used for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// All fusion edges.
    Full,
    /// Drops the down-fusing skip inside three-scale blocks.
    UpOnly,
    /// Drops the up-fusing skip inside three-scale blocks.
    DownOnly,
    /// Drops the half-scale flow between consecutive blocks.
    NoMidFlow,
    /// Full-resolution path only: stem, three 5×5 convs, head.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::UpOnly,
        Variant::DownOnly,
        Variant::NoMidFlow,
        Variant::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::UpOnly => "up-only",
            Variant::DownOnly => "down-only",
            Variant::NoMidFlow => "no-mid-flow",
            Variant::Baseline => "baseline",
        }
    }

    fn up_skip(self) -> bool {
        !matches!(self, Variant::DownOnly)
    }

    fn down_skip(self) -> bool {
        !matches!(self, Variant::UpOnly)
    }

    fn mid_flow(self) -> bool {
        !matches!(self, Variant::NoMidFlow)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub variant: Variant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { variant: Variant::Full }
    }
}

/// Fusion edges inside a three-scale block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEdges {
    pub up_skip: bool,
    pub down_skip: bool,
}

impl Default for BlockEdges {
    fn default() -> Self {
        Self {
            up_skip: true,
            down_skip: true,
        }
    }
}

/// Appends a two-scale block. Returns `(output, half_scale_features)`.
///
/// ```text
/// upper = relu(conv(x))
/// lower = relu(conv(pool(x)))
/// out   = avg(upper, up(lower))
/// ```
pub fn build_two_scale(g: &mut Graph, x: NodeRef, prefix: &str) -> Result<(NodeRef, NodeRef)> {
    let upper = g.conv(&format!("{prefix}.upper"), x)?;
    let upper = g.relu(upper)?;
    let down = g.pool(x)?;
    let lower = g.conv(&format!("{prefix}.lower"), down)?;
    let lower = g.relu(lower)?;
    let lifted = g.upsample(lower)?;
    let out = g.average(upper, lifted)?;
    Ok((out, lower))
}

/// Appends a three-scale block. Returns `(output, fused_mid_features)`.
///
/// ```text
/// upper  = relu(conv(x))
/// mid_in = pool(x)
/// mid    = relu(conv(mid_in))
/// low_in = pool(mid_in)            [avg with pool(mid) if down_skip]
/// low    = relu(conv(low_in))
/// mid_f  = avg(mid, up(low))
/// out    = avg(upper, up(mid_f))   [avg with up(up(low)) if up_skip]
/// ```
pub fn build_three_scale(g: &mut Graph, x: NodeRef, prefix: &str, edges: BlockEdges) -> Result<(NodeRef, NodeRef)> {
    let upper = g.conv(&format!("{prefix}.upper"), x)?;
    let upper = g.relu(upper)?;
    let mid_in = g.pool(x)?;
    let mid = g.conv(&format!("{prefix}.mid"), mid_in)?;
    let mid = g.relu(mid)?;
    let mut low_in = g.pool(mid_in)?;
    if edges.down_skip {
        let mid_down = g.pool(mid)?;
        low_in = g.average(low_in, mid_down)?;
    }
    let low = g.conv(&format!("{prefix}.low"), low_in)?;
    let low = g.relu(low)?;
    let low_up = g.upsample(low)?;
    let mid_f = g.average(mid, low_up)?;
    let mid_up = g.upsample(mid_f)?;
    let mut out = g.average(upper, mid_up)?;
    if edges.up_skip {
        let low_up2 = g.upsample(low_up)?;
        out = g.average(out, low_up2)?;
    }
    Ok((out, mid_f))
}

fn check_block_input(x: &MaskedMap, divisor: usize) -> Result<()> {
    if x.channels() != CHANNELS {
        return Err(Error::Config(format!(
            "multi-scale blocks take {CHANNELS} channels, got {}",
            x.channels()
        )));
    }
    if x.height() % divisor != 0 || x.width() % divisor != 0 {
        return Err(dim_err(format!(
            "block input {}x{} is not divisible by {divisor}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// Declares the parameters of a block named `prefix`.
pub fn init_block_params<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, three_scale: bool) -> Result<()> {
    let paths: &[&str] = if three_scale { &["upper", "mid", "low"] } else { &["upper", "lower"] };
    for p in paths {
        store.init_conv(rng, &format!("{prefix}.{p}"), CHANNELS, CHANNELS, KERNEL_HALF)?;
    }
    Ok(())
}

/// Evaluates a standalone two-scale block whose parameters live under `prefix`.
pub fn two_scale_block(x: &MaskedMap, store: &ParamStore, prefix: &str) -> Result<MaskedMap> {
    check_block_input(x, 2)?;
    let mut g = Graph::new(1);
    build_two_scale(&mut g, NodeRef::Input(0), prefix)?;
    let tape = g.forward(std::slice::from_ref(x), store)?;
    Ok(tape.output().expect("non-empty graph").clone())
}

/// Evaluates a standalone three-scale block. Returns `(output, fused_mid)`.
pub fn three_scale_block(x: &MaskedMap, store: &ParamStore, prefix: &str, edges: BlockEdges) -> Result<(MaskedMap, MaskedMap)> {
    check_block_input(x, 4)?;
    let mut g = Graph::new(1);
    let (_, mid) = build_three_scale(&mut g, NodeRef::Input(0), prefix, edges)?;
    let tape = g.forward(std::slice::from_ref(x), store)?;
    let NodeRef::Node(mid) = mid else { unreachable!("blocks emit nodes") };
    Ok((
        tape.output().expect("non-empty graph").clone(),
        tape.records[mid].output.as_ref().clone(),
    ))
}

/// The depth-only multi-scale network.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    graph: Graph,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Self {
        let graph = Self::build(config.variant).expect("static architecture is well formed");
        Self { config, graph }
    }

    pub fn config(&self) -> NetworkConfig {
        self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        match self.config.variant {
            Variant::Baseline => 1,
            _ => 8,
        }
    }

    fn build(variant: Variant) -> Result<Graph> {
        let mut g = Graph::new(1);
        let stem = g.conv("stem", NodeRef::Input(0))?;
        let mut x = g.relu(stem)?;
        if variant == Variant::Baseline {
            for i in 1..=3 {
                let c = g.conv(&format!("block{i}.upper"), x)?;
                x = g.relu(c)?;
            }
            g.conv("head", x)?;
            return Ok(g);
        }
        let edges = BlockEdges {
            up_skip: variant.up_skip(),
            down_skip: variant.down_skip(),
        };
        let (o1, mid1) = build_two_scale(&mut g, x, "block1")?;
        let mut x = g.pool(o1)?;
        if variant.mid_flow() {
            x = g.average(x, mid1)?;
        }
        let (o2, mid2) = build_three_scale(&mut g, x, "block2", edges)?;
        let mut x = g.pool(o2)?;
        if variant.mid_flow() {
            x = g.average(x, mid2)?;
        }
        let (o3, _) = build_two_scale(&mut g, x, "block3")?;
        let mut x = g.pool(o3)?;
        // decoder: each upsampling is fused with the encoder output of the
        // same scale
        for lateral in [o3, o2, o1] {
            let up = g.upsample(x)?;
            x = g.average(up, lateral)?;
        }
        g.conv("head", x)?;
        Ok(g)
    }

    /// Declares every parameter with fresh random weights.
    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let mut go = || -> Result<()> {
            store.init_conv(rng, "stem", CHANNELS, 1, KERNEL_HALF)?;
            if self.config.variant == Variant::Baseline {
                for i in 1..=3 {
                    store.init_conv(rng, &format!("block{i}.upper"), CHANNELS, CHANNELS, KERNEL_HALF)?;
                }
            } else {
                init_block_params(store, rng, "block1", false)?;
                init_block_params(store, rng, "block2", true)?;
                init_block_params(store, rng, "block3", false)?;
            }
            store.init_conv(rng, "head", 1, CHANNELS, 0)
        };
        go().expect("fresh store has no name clashes");
    }

    fn check_input(&self, depth: &MaskedMap) -> Result<()> {
        if depth.channels() != 1 {
            return Err(Error::Config(format!("depth input must have 1 channel, got {}", depth.channels())));
        }
        let d = self.divisor();
        if depth.height() % d != 0 || depth.width() % d != 0 || depth.height() == 0 || depth.width() == 0 {
            return Err(dim_err(format!(
                "input {}x{} is not a positive multiple of {d}",
                depth.height(),
                depth.width()
            )));
        }
        Ok(())
    }

    /// Predicts a 1×H×W depth map. Pixels with no valid support are 0.
    pub fn forward(&self, depth: &MaskedMap, store: &ParamStore) -> Result<(Array3, ForwardTape)> {
        self.check_input(depth)?;
        let tape = self.graph.forward(std::slice::from_ref(depth), store)?;
        let pred = tape.output().expect("non-empty graph").features().clone();
        Ok((pred, tape))
    }

    /// Parameter gradients for `d_pred`, one entry per stored parameter.
    pub fn backward(&self, tape: &ForwardTape, d_pred: &Array3, store: &ParamStore) -> Result<Gradients> {
        let (g, _) = self.graph.backward(tape, d_pred, store)?;
        let mut out = Gradients::zeros_like(store);
        out.merge(&g);
        Ok(out)
    }
}
