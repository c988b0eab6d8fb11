//! Operator-chain workloads: standard FFN, gated FFN and conv chains lowered
//! to GEMM chains, plus the benchmark presets.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::Tier;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Smallest legal extent: one MMA tile.
pub const MMA_EXTENT: u64 = 16;

/// Loop dimensions of a two-GEMM chain: `C[m,n] = A[m,k] B[k,n]`,
/// `E[m,l] = C[m,n] D[n,l]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dim {
    #[serde(rename = "M")]
    M,
    #[serde(rename = "N")]
    N,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "L")]
    L,
}

impl Dim {
    pub const ALL: [Dim; 4] = [Dim::M, Dim::N, Dim::K, Dim::L];

    pub fn index(self) -> usize {
        match self {
            Dim::M => 0,
            Dim::N => 1,
            Dim::K => 2,
            Dim::L => 3,
        }
    }

    pub fn letter(self) -> char {
        ['M', 'N', 'K', 'L'][self.index()]
    }

    pub fn from_letter(c: char) -> Option<Dim> {
        match c.to_ascii_uppercase() {
            'M' => Some(Dim::M),
            'N' => Some(Dim::N),
            'K' => Some(Dim::K),
            'L' => Some(Dim::L),
            _ => None,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One value per loop dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct DimMap<T> {
    pub m: T,
    pub n: T,
    pub k: T,
    pub l: T,
}

impl<T> DimMap<T> {
    pub fn new(m: T, n: T, k: T, l: T) -> Self {
        Self { m, n, k, l }
    }

    pub fn from_fn(mut f: impl FnMut(Dim) -> T) -> Self {
        Self::new(f(Dim::M), f(Dim::N), f(Dim::K), f(Dim::L))
    }
}

impl<T: Copy> DimMap<T> {
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v, v)
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.m, self.n, self.k, self.l]
    }
}

impl<T> Index<Dim> for DimMap<T> {
    type Output = T;
    fn index(&self, d: Dim) -> &T {
        match d {
            Dim::M => &self.m,
            Dim::N => &self.n,
            Dim::K => &self.k,
            Dim::L => &self.l,
        }
    }
}

impl<T> IndexMut<Dim> for DimMap<T> {
    fn index_mut(&mut self, d: Dim) -> &mut T {
        match d {
            Dim::M => &mut self.m,
            Dim::N => &mut self.n,
            Dim::K => &mut self.k,
            Dim::L => &mut self.l,
        }
    }
}

/// Extents of the chain plus storage sizes.
///
/// `element_size` sizes inputs and the final output in global memory,
/// `accumulator_size` sizes on-chip partial sums (C and E partials).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub l: u64,
    pub element_size: u64,
    pub accumulator_size: u64,
}

impl DimensionSpec {
    pub const DEFAULT_ELEMENT_SIZE: u64 = 2;
    pub const DEFAULT_ACCUMULATOR_SIZE: u64 = 4;

    /// f16 inputs, f32 accumulators.
    pub fn new(m: u64, n: u64, k: u64, l: u64) -> Self {
        Self {
            m,
            n,
            k,
            l,
            element_size: Self::DEFAULT_ELEMENT_SIZE,
            accumulator_size: Self::DEFAULT_ACCUMULATOR_SIZE,
        }
    }

    pub fn with_element_size(mut self, bytes: u64) -> Self {
        self.element_size = bytes;
        self
    }

    pub fn with_accumulator_size(mut self, bytes: u64) -> Self {
        self.accumulator_size = bytes;
        self
    }

    pub fn extents(&self) -> DimMap<u64> {
        DimMap::new(self.m, self.n, self.k, self.l)
    }

    pub fn extent(&self, d: Dim) -> u64 {
        self.extents()[d]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("n", self.n), ("k", self.k), ("l", self.l)] {
            if v < MMA_EXTENT {
                return Err(Error::InvalidDimension {
                    name,
                    value: v,
                    reason: "extent below one 16-wide MMA tile",
                });
            }
        }
        for (name, v) in [
            ("element_size", self.element_size),
            ("accumulator_size", self.accumulator_size),
        ] {
            if ![2, 4, 8].contains(&v) {
                return Err(Error::InvalidDimension {
                    name,
                    value: v,
                    reason: "scalar size must be 2, 4 or 8 bytes",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    StandardFfn,
    GatedFfn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Silu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Silu => silu(x),
        }
    }

    pub fn is_linear(self) -> bool {
        self == Activation::Identity
    }
}

pub fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "silu" | "swish" => Ok(Activation::Silu),
            other => Err(Error::Usage(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Input,
    Intermediate,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorDecl {
    pub name: String,
    pub indexing_dims: Vec<Dim>,
    pub role: TensorRole,
    /// Slowest tier the tensor may occupy.
    pub spill_floor: Tier,
}

impl TensorDecl {
    fn new(name: &str, dims: &[Dim], role: TensorRole) -> Self {
        let spill_floor = match role {
            TensorRole::Intermediate => Tier::Dsm,
            TensorRole::Input | TensorRole::Output => Tier::Global,
        };
        Self {
            name: name.to_string(),
            indexing_dims: dims.to_vec(),
            role,
            spill_floor,
        }
    }

    pub fn indexes(&self, d: Dim) -> bool {
        self.indexing_dims.contains(&d)
    }
}

/// A fused two-GEMM chain.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChainGraph {
    pub kind: ChainKind,
    pub dims: DimensionSpec,
    pub activation: Activation,
    pub tensors: Vec<TensorDecl>,
    /// Rows of `m` carrying real data; the rest is zero padding.
    pub valid_m: u64,
    pub label: Option<String>,
}

impl ChainGraph {
    pub fn tensor(&self, name: &str) -> Option<&TensorDecl> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn intermediate(&self) -> &TensorDecl {
        self.tensors
            .iter()
            .find(|t| t.role == TensorRole::Intermediate)
            .expect("graph has an intermediate")
    }

    pub fn output(&self) -> &TensorDecl {
        self.tensors
            .iter()
            .find(|t| t.role == TensorRole::Output)
            .expect("graph has an output")
    }

    pub fn is_gated(&self) -> bool {
        self.kind == ChainKind::GatedFfn
    }

    /// Activation that sits between the two GEMMs; gated chains are nonlinear
    /// through the SiLU branch.
    pub fn effective_activation(&self) -> Activation {
        match self.kind {
            ChainKind::StandardFfn => self.activation,
            ChainKind::GatedFfn => Activation::Silu,
        }
    }

    /// Sequential lowering of a gated chain: one GEMM over a K extent of 2k.
    pub fn doubled_k_view(&self) -> Option<ChainGraph> {
        if !self.is_gated() {
            return None;
        }
        let dims = DimensionSpec {
            k: 2 * self.dims.k,
            ..self.dims
        };
        let mut g = build_standard_ffn(dims, Activation::Silu).ok()?;
        g.valid_m = self.valid_m;
        g.label = self.label.as_ref().map(|l| format!("{l}/doubled-k"));
        Some(g)
    }

    /// Same chain with every extent clamped to `cap` (multiples of 16 are kept).
    pub fn scaled_to(&self, cap: u64) -> Result<ChainGraph> {
        let d = self.dims;
        let dims = DimensionSpec {
            m: d.m.min(cap),
            n: d.n.min(cap),
            k: d.k.min(cap),
            l: d.l.min(cap),
            ..d
        };
        let mut g = match self.kind {
            ChainKind::StandardFfn => build_standard_ffn(dims, self.activation)?,
            ChainKind::GatedFfn => build_gated_ffn(dims)?,
        };
        g.valid_m = self.valid_m.min(dims.m);
        g.label = self.label.clone();
        Ok(g)
    }

    /// Bytes of the full intermediate at element size.
    pub fn intermediate_bytes(&self) -> u64 {
        self.dims.m * self.dims.n * self.dims.element_size
    }
}

/// Serializable description of a chain, enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub kind: ChainKind,
    pub activation: Activation,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub l: u64,
    pub element_size: u64,
    pub accumulator_size: u64,
    pub valid_m: u64,
}

impl WorkloadInfo {
    pub fn of(graph: &ChainGraph) -> WorkloadInfo {
        let d = graph.dims;
        WorkloadInfo {
            label: graph.label.clone(),
            kind: graph.kind,
            activation: graph.activation,
            m: d.m,
            n: d.n,
            k: d.k,
            l: d.l,
            element_size: d.element_size,
            accumulator_size: d.accumulator_size,
            valid_m: graph.valid_m,
        }
    }

    pub fn to_graph(&self) -> Result<ChainGraph> {
        let dims = DimensionSpec {
            m: self.m,
            n: self.n,
            k: self.k,
            l: self.l,
            element_size: self.element_size,
            accumulator_size: self.accumulator_size,
        };
        let mut g = match self.kind {
            ChainKind::StandardFfn => build_standard_ffn(dims, self.activation)?,
            ChainKind::GatedFfn => build_gated_ffn(dims)?,
        };
        g.valid_m = self.valid_m.min(dims.m);
        g.label = self.label.clone();
        Ok(g)
    }
}

pub fn build_standard_ffn(dims: DimensionSpec, activation: Activation) -> Result<ChainGraph> {
    dims.validate()?;
    use Dim::*;
    use TensorRole::*;
    Ok(ChainGraph {
        kind: ChainKind::StandardFfn,
        dims,
        activation,
        tensors: vec![
            TensorDecl::new("A", &[M, K], Input),
            TensorDecl::new("B", &[K, N], Input),
            TensorDecl::new("C", &[M, N], Intermediate),
            TensorDecl::new("D", &[N, L], Input),
            TensorDecl::new("E", &[M, L], Output),
        ],
        valid_m: dims.m,
        label: None,
    })
}

/// `E = (SiLU(A B0) * (A B1)) D`.
pub fn build_gated_ffn(dims: DimensionSpec) -> Result<ChainGraph> {
    dims.validate()?;
    use Dim::*;
    use TensorRole::*;
    Ok(ChainGraph {
        kind: ChainKind::GatedFfn,
        dims,
        activation: Activation::Silu,
        tensors: vec![
            TensorDecl::new("A", &[M, K], Input),
            TensorDecl::new("B0", &[K, N], Input),
            TensorDecl::new("B1", &[K, N], Input),
            TensorDecl::new("C", &[M, N], Intermediate),
            TensorDecl::new("D", &[N, L], Input),
            TensorDecl::new("E", &[M, L], Output),
        ],
        valid_m: dims.m,
        label: None,
    })
}

/// Two-conv chain: `k1 x k1` conv (stride 1, same padding), ReLU, pointwise conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvChainConfig {
    pub ic: u64,
    pub h: u64,
    pub w: u64,
    pub oc1: u64,
    pub oc2: u64,
    pub k1: u64,
    pub k2: u64,
}

impl ConvChainConfig {
    pub fn new(ic: u64, h: u64, w: u64, oc1: u64, oc2: u64, k1: u64, k2: u64) -> Self {
        Self {
            ic,
            h,
            w,
            oc1,
            oc2,
            k1,
            k2,
        }
    }

    pub fn gemm_m(&self) -> u64 {
        self.h * self.w
    }

    pub fn gemm_k(&self) -> u64 {
        self.ic * self.k1 * self.k1
    }

    /// im2col of a CHW feature map: row = output pixel (y*w + x), column =
    /// (channel, ky, kx). Out-of-bounds taps read zero.
    pub fn im2col<T: Scalar>(&self, input: &[T]) -> Result<Matrix<T>> {
        let (ic, h, w, k) = (
            self.ic as usize,
            self.h as usize,
            self.w as usize,
            self.k1 as usize,
        );
        if input.len() != ic * h * w {
            return Err(Error::ShapeMismatch(format!(
                "feature map has {} values, expected {}",
                input.len(),
                ic * h * w
            )));
        }
        let pad = (k / 2) as isize;
        Ok(Matrix::from_fn(h * w, ic * k * k, |row, col| {
            let (y, x) = ((row / w) as isize, (row % w) as isize);
            let c = col / (k * k);
            let ky = ((col / k) % k) as isize;
            let kx = (col % k) as isize;
            let (sy, sx) = (y + ky - pad, x + kx - pad);
            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                T::zero()
            } else {
                input[c * h * w + sy as usize * w + sx as usize]
            }
        }))
    }

    /// `[oc1][ic][k1][k1]` weights as the `k x n` GEMM operand.
    pub fn conv1_weights<T: Scalar>(&self, weights: &[T]) -> Result<Matrix<T>> {
        let kk = self.gemm_k() as usize;
        let oc1 = self.oc1 as usize;
        if weights.len() != kk * oc1 {
            return Err(Error::ShapeMismatch("conv1 weight count".into()));
        }
        Ok(Matrix::from_fn(kk, oc1, |r, c| weights[c * kk + r]))
    }

    /// `[oc2][oc1]` pointwise weights as the `n x l` GEMM operand.
    pub fn conv2_weights<T: Scalar>(&self, weights: &[T]) -> Result<Matrix<T>> {
        let (oc1, oc2) = (self.oc1 as usize, self.oc2 as usize);
        if weights.len() != oc1 * oc2 {
            return Err(Error::ShapeMismatch("conv2 weight count".into()));
        }
        Ok(Matrix::from_fn(oc1, oc2, |r, c| weights[c * oc1 + r]))
    }
}

/// Lowers a conv chain to a standard FFN. `m` is zero-padded up to a multiple
/// of 16; `valid_m` keeps the real pixel count.
pub fn conv_chain_to_gemm(cfg: &ConvChainConfig) -> Result<ChainGraph> {
    if cfg.k2 != 1 {
        return Err(Error::UnsupportedConvChain(format!(
            "second conv kernel is {0}x{0}, only pointwise is supported",
            cfg.k2
        )));
    }
    if cfg.k1 % 2 == 0 {
        return Err(Error::UnsupportedConvChain(
            "even kernel size has no symmetric same padding".into(),
        ));
    }
    let raw_m = cfg.gemm_m();
    if raw_m < MMA_EXTENT {
        return Err(Error::InvalidDimension {
            name: "m",
            value: raw_m,
            reason: "extent below one 16-wide MMA tile",
        });
    }
    let m = raw_m.div_ceil(MMA_EXTENT) * MMA_EXTENT;
    let dims = DimensionSpec::new(m, cfg.oc1, cfg.gemm_k(), cfg.oc2);
    let mut g = build_standard_ffn(dims, Activation::Relu)?;
    g.valid_m = raw_m;
    Ok(g)
}

const GEMM_PRESETS: [(&str, [u64; 4], &str); 10] = [
    ("G1", [128, 512, 32, 256], "DLRM-0"),
    ("G2", [128, 256, 512, 64], "DLRM-1"),
    ("G3", [128, 512, 416, 256], "DLRM-2"),
    ("G4", [128, 3072, 768, 768], "GPT-2-Small"),
    ("G5", [128, 16384, 4096, 4096], "GPT-6.7B"),
    ("G6", [128, 4096, 1024, 1024], "GPT2-medium"),
    ("G7", [128, 768, 768, 768], "nlp_gpt3_base"),
    ("G8", [128, 8192, 2048, 2048], "OPT-1.3B"),
    ("G9", [128, 2048, 512, 512], "Performer"),
    ("G10", [128, 1536, 384, 384], "BERT"),
];

const GATED_PRESETS: [(&str, [u64; 4], &str); 8] = [
    ("S1", [128, 8192, 3072, 3072], "llama-3.2-3B"),
    ("S2", [128, 5632, 2048, 2048], "llama-1.1B"),
    ("S3", [128, 11008, 4096, 4096], "Llama-2-7b"),
    ("S4", [128, 8192, 2048, 2048], "Qwen2.5-2.1B"),
    ("S5", [128, 11008, 2048, 2048], "Qwen2.5-3B"),
    ("S6", [128, 8960, 1536, 1536], "Qwen2.5-1.5B"),
    ("S7", [128, 9728, 2560, 2560], "Qwen3-4B"),
    ("S8", [128, 3072, 1024, 1024], "Qwen3-0.6B"),
];

/// (ic, h, w, oc1, oc2, k1, k2)
const CONV_PRESETS: [(&str, [u64; 7]); 8] = [
    ("C1", [64, 56, 56, 256, 64, 1, 1]),
    ("C2", [128, 28, 28, 512, 128, 1, 1]),
    ("C3", [256, 14, 14, 1024, 256, 1, 1]),
    ("C4", [512, 7, 7, 2048, 512, 1, 1]),
    ("C5", [64, 56, 56, 64, 256, 3, 1]),
    ("C6", [128, 28, 28, 128, 512, 3, 1]),
    ("C7", [256, 14, 14, 256, 1024, 3, 1]),
    ("C8", [512, 7, 7, 512, 2048, 3, 1]),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PresetInfo {
    pub id: String,
    pub kind: String,
    pub model: String,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub l: u64,
}

pub fn preset_ids() -> Vec<&'static str> {
    GEMM_PRESETS
        .iter()
        .map(|p| p.0)
        .chain(GATED_PRESETS.iter().map(|p| p.0))
        .chain(CONV_PRESETS.iter().map(|p| p.0))
        .collect()
}

pub fn conv_preset(id: &str) -> Option<ConvChainConfig> {
    CONV_PRESETS
        .iter()
        .find(|p| p.0.eq_ignore_ascii_case(id))
        .map(|(_, c)| ConvChainConfig::new(c[0], c[1], c[2], c[3], c[4], c[5], c[6]))
}

pub fn preset(id: &str) -> Result<ChainGraph> {
    let mut g = if let Some((_, d, _)) = GEMM_PRESETS.iter().find(|p| p.0.eq_ignore_ascii_case(id)) {
        build_standard_ffn(DimensionSpec::new(d[0], d[1], d[2], d[3]), Activation::Relu)?
    } else if let Some((_, d, _)) = GATED_PRESETS.iter().find(|p| p.0.eq_ignore_ascii_case(id)) {
        build_gated_ffn(DimensionSpec::new(d[0], d[1], d[2], d[3]))?
    } else if let Some(cfg) = conv_preset(id) {
        conv_chain_to_gemm(&cfg)?
    } else {
        return Err(Error::UnknownPreset(id.to_string()));
    };
    g.label = Some(id.to_ascii_uppercase());
    Ok(g)
}

pub fn preset_catalog() -> Vec<PresetInfo> {
    let mut out = Vec::new();
    for (id, d, model) in GEMM_PRESETS {
        out.push(PresetInfo {
            id: id.into(),
            kind: "standard_ffn".into(),
            model: model.into(),
            m: d[0],
            n: d[1],
            k: d[2],
            l: d[3],
        });
    }
    for (id, d, model) in GATED_PRESETS {
        out.push(PresetInfo {
            id: id.into(),
            kind: "gated_ffn".into(),
            model: model.into(),
            m: d[0],
            n: d[1],
            k: d[2],
            l: d[3],
        });
    }
    for (id, _) in CONV_PRESETS {
        let g = preset(id).expect("conv presets lower");
        out.push(PresetInfo {
            id: id.into(),
            kind: "conv_chain".into(),
            model: "ResNet".into(),
            m: g.dims.m,
            n: g.dims.n,
            k: g.dims.k,
            l: g.dims.l,
        });
    }
    out
}

/// Parses the workload text format:
///
/// ```text
/// # standard or gated chain
/// kind = standard        # standard | gated | conv
/// m = 128
/// n = 512
/// k = 32
/// l = 256
/// activation = relu      # identity | relu | silu (standard only)
/// element_size = 2
/// accumulator_size = 4
/// ```
///
/// Conv chains use `ic, h, w, oc1, oc2, k1, k2` instead of `m, n, k, l`.
pub fn parse_workload(text: &str) -> Result<ChainGraph> {
    let mut kind = None;
    let mut ints = std::collections::BTreeMap::new();
    let mut activation = Activation::Relu;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "kind" => kind = Some(value.to_ascii_lowercase()),
            "activation" => {
                activation = value.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("unknown activation '{value}'"),
                })?
            }
            "m" | "n" | "k" | "l" | "element_size" | "accumulator_size" | "ic" | "h" | "w"
            | "oc1" | "oc2" | "k1" | "k2" => {
                let v: u64 = value.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("'{key}' expects a non-negative integer, got '{value}'"),
                })?;
                ints.insert(key.to_string(), v);
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown key '{other}'"),
                })
            }
        }
    }
    let get = |k: &str| {
        ints.get(k).copied().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing key '{k}'"),
        })
    };
    let kind = kind.unwrap_or_else(|| "standard".into());
    let mut graph = match kind.as_str() {
        "standard" | "standard_ffn" | "gated" | "gated_ffn" => {
            let mut dims = DimensionSpec::new(get("m")?, get("n")?, get("k")?, get("l")?);
            if let Some(&e) = ints.get("element_size") {
                dims.element_size = e;
            }
            if let Some(&a) = ints.get("accumulator_size") {
                dims.accumulator_size = a;
            }
            if kind.starts_with("gated") {
                build_gated_ffn(dims)?
            } else {
                build_standard_ffn(dims, activation)?
            }
        }
        "conv" => {
            let cfg = ConvChainConfig::new(
                get("ic")?,
                get("h")?,
                get("w")?,
                get("oc1")?,
                get("oc2")?,
                get("k1")?,
                ints.get("k2").copied().unwrap_or(1),
            );
            let mut g = conv_chain_to_gemm(&cfg)?;
            if let Some(&e) = ints.get("element_size") {
                g.dims.element_size = e;
            }
            if let Some(&a) = ints.get("accumulator_size") {
                g.dims.accumulator_size = a;
            }
            g.dims.validate()?;
            g
        }
        other => {
            return Err(Error::Parse {
                line: 0,
                message: format!("unknown kind '{other}'"),
            })
        }
    };
    graph.label = Some("workload-file".into());
    Ok(graph)
}
