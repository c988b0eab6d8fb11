//! Tile-level replay of a fusion plan.
//!
//! Clusters run one after another; inside a cluster every phase (GEMM0,
//! all_exchange, shuffle + GEMM1, reduce_scatter + store) runs for all blocks
//! before the next phase starts. Byte counters are bumped where a transfer
//! happens, never from closed forms.

use crate::analyzer::{place_tensor, Occupancy, TensorTraffic, TrafficCounts};
use crate::error::{Error, Result};
use crate::hardware::{DeviceModel, Tier};
use crate::matrix::Matrix;
use crate::plan::{validate_plan, FusionPlan, GatedLowering, ReductionMode};
use crate::scalar::Scalar;
use crate::workload::{silu, ChainGraph, Dim, DimMap};

use super::dot::TileGraph;
use super::ChainInputs;

fn tier_index(t: Tier) -> usize {
    Tier::ALL.iter().position(|x| *x == t).expect("tier listed")
}

/// Innermost temporal position indexing any of `dims`.
fn prefix_pos(temporal: &[Dim], dims: &[Dim]) -> Option<usize> {
    temporal.iter().rposition(|d| dims.contains(d))
}

pub(crate) struct Output<T> {
    pub e: Option<Matrix<T>>,
    pub trace: TrafficCounts,
}

struct Sim<'a, T> {
    graph: &'a ChainGraph,
    plan: &'a FusionPlan,

    inputs: Option<&'a ChainInputs<T>>,
    out: Option<Matrix<T>>,
    trace: TrafficCounts,
    dot: Option<&'a mut TileGraph>,
    recording: bool,

    cm: usize,
    cn: usize,
    ck: usize,
    g1: usize,
    r: usize,
    bm: usize,
    bn: usize,
    bk: usize,
    bl: usize,
    es: u64,
    acc: u64,
    nacc: usize,
    c_alloc: [u64; 5],
    e_alloc: [u64; 5],

    c_acc: Vec<Vec<T>>,
    c_full: Vec<Vec<T>>,
    e_part: Vec<Vec<T>>,
    /// Output (tile, chunk) pieces already written once.
    stored: Vec<bool>,
}

impl<'a, T: Scalar> Sim<'a, T> {
    fn bid(&self, mi: usize, ni: usize, ki: usize) -> usize {
        (mi * self.cn + ni) * self.ck + ki
    }

    fn node(mi: usize, ni: usize, ki: usize) -> String {
        format!("blk_{mi}_{ni}_{ki}")
    }

    fn edge(&mut self, from: String, to: String, kind: &str, bytes: u64) {
        if self.recording {
            if let Some(g) = self.dot.as_deref_mut() {
                g.add(from, to, kind, bytes);
            }
        }
    }

    fn load(&mut self, tensor: &str, node: String, bytes: u64) {
        self.trace.volume.global += bytes;
        self.trace.volume.smem += bytes;
        self.trace.tensors.entry(tensor.to_string()).or_default().load += bytes;
        self.edge("global".into(), node, tensor, bytes);
    }

    /// Tier traffic of one use of a resident buffer: written once, read once.
    fn touch(&mut self, alloc: [u64; 5]) {
        for t in Tier::ALL {
            let b = 2 * alloc[tier_index(t)];
            match t {
                Tier::Reg => self.trace.volume.reg += b,
                Tier::Smem => self.trace.volume.smem += b,
                Tier::Dsm => {
                    self.trace.volume.dsm += b;
                    self.trace.primitives.dsm_spill += b;
                }
                Tier::L2 | Tier::Global => self.trace.volume.global += b,
            }
        }
    }

    fn dsm(&mut self, bytes: u64) {
        self.trace.volume.dsm += bytes;
    }

    /// Weight tiles block `ki` stages per K step.
    fn b_names(&self, ki: usize) -> &'static [&'static str] {
        match self.plan.gated_lowering {
            GatedLowering::NotApplicable => &["B"],
            GatedLowering::SpatialSplit if ki < self.ck / 2 => &["B0"],
            GatedLowering::SpatialSplit => &["B1"],
            GatedLowering::DoubledK => &["B0", "B1"],
        }
    }

    /// First row of block `ki`'s K tile.
    fn k_tile(&self, origin_k: u64, ki: usize) -> usize {
        let slot = match self.plan.gated_lowering {
            GatedLowering::SpatialSplit => ki % (self.ck / 2),
            _ => ki,
        };
        origin_k as usize + slot * self.bk
    }

    fn load_inputs(&mut self, a: bool, b: bool, d: bool) {
        let es = self.es;
        let fa = (self.bm * self.bk) as u64 * es;
        let fb = (self.bk * self.bn) as u64 * es;
        let fd = (self.bn * self.bl) as u64 * es;
        for mi in 0..self.cm {
            for ni in 0..self.cn {
                for ki in 0..self.ck {
                    let node = Self::node(mi, ni, ki);
                    if a {
                        self.load("A", node.clone(), fa);
                    }
                    if b {
                        for name in self.b_names(ki) {
                            self.load(name, node.clone(), fb);
                        }
                    }
                    if d {
                        for _ in 0..self.g1 {
                            self.load("D", node.clone(), fd);
                        }
                    }
                }
            }
        }
    }

    fn reset_c(&mut self) {
        for v in &mut self.c_acc {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Every block adds its A·B tile product into its accumulator.
    fn gemm0(&mut self, origin: &DimMap<u64>) {
        let Some(inp) = self.inputs else { return };
        let (bm, bn, bk) = (self.bm, self.bn, self.bk);
        let a = inp.a.as_slice();
        let acols = inp.a.cols();
        for mi in 0..self.cm {
            for ni in 0..self.cn {
                for ki in 0..self.ck {
                    let k0 = self.k_tile(origin.k, ki);
                    let b1 = || inp.b1.as_ref().expect("gated inputs");
                    let weights: Vec<&Matrix<T>> = match self.plan.gated_lowering {
                        GatedLowering::NotApplicable => vec![&inp.b0],
                        GatedLowering::SpatialSplit if ki < self.ck / 2 => vec![&inp.b0],
                        GatedLowering::SpatialSplit => vec![b1()],
                        GatedLowering::DoubledK => vec![&inp.b0, b1()],
                    };
                    let row0 = origin.m as usize + mi * bm;
                    let col0 = origin.n as usize + ni * bn;
                    let b = self.bid(mi, ni, ki);
                    for (slot, bmat) in weights.into_iter().enumerate() {
                        let bs = bmat.as_slice();
                        let bcols = bmat.cols();
                        let acc = &mut self.c_acc[b][slot * bm * bn..(slot + 1) * bm * bn];
                        for i in 0..bm {
                            let arow = &a[(row0 + i) * acols + k0..][..bk];
                            let out = &mut acc[i * bn..(i + 1) * bn];
                            for (kk, &av) in arow.iter().enumerate() {
                                let brow_s = &bs[(k0 + kk) * bcols + col0..][..bn];
                                for (o, &bv) in out.iter_mut().zip(brow_s) {
                                    *o += av * bv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Combines the K-split partials of every (m, n) block pair; afterwards
    /// all members hold the activated C tile.
    fn all_exchange(&mut self) {
        let f_c = (self.bm * self.bn) as u64 * self.acc;
        let resident = f_c * self.nacc as u64;
        let g0 = self.ck;
        for mi in 0..self.cm {
            for ni in 0..self.cn {
                for dst in 0..g0 {
                    for src in 0..g0 {
                        if src != dst {
                            self.dsm(resident);
                            self.trace.primitives.all_exchange += resident;
                            self.edge(Self::node(mi, ni, src), Self::node(mi, ni, dst), "all_exchange", resident);
                        }
                    }
                }
                let alloc = self.c_alloc;
                for _ in 0..g0 {
                    self.touch(alloc);
                }
                if self.inputs.is_some() {
                    self.combine(mi, ni);
                }
            }
        }
    }

    fn combine(&mut self, mi: usize, ni: usize) {
        let size = self.bm * self.bn;
        let act = self.graph.activation;
        let members: Vec<usize> = (0..self.ck).map(|ki| self.bid(mi, ni, ki)).collect();
        let sum = |slot: usize, range: &[usize], acc: &Vec<Vec<T>>| -> Vec<T> {
            let mut s = vec![T::zero(); size];
            for &b in range {
                for (x, y) in s.iter_mut().zip(&acc[b][slot * size..(slot + 1) * size]) {
                    *x += *y;
                }
            }
            s
        };
        let full = match self.plan.gated_lowering {
            GatedLowering::NotApplicable => sum(0, &members, &self.c_acc).into_iter().map(|v| act.apply(v)).collect(),
            GatedLowering::SpatialSplit => {
                let ks = self.ck / 2;
                let gate = sum(0, &members[..ks], &self.c_acc);
                let up = sum(0, &members[ks..], &self.c_acc);
                gate.into_iter().zip(up).map(|(g, u)| silu(g) * u).collect()
            }
            GatedLowering::DoubledK => {
                let gate = sum(0, &members, &self.c_acc);
                let up = sum(1, &members, &self.c_acc);
                gate.into_iter().zip(up).map(|(g, u)| silu(g) * u).collect()
            }
        };
        self.c_full[mi * self.cn + ni] = full;
    }

    /// One GEMM1 pass: C slices circulate around each shuffle group while every
    /// block accumulates its E partial.
    fn gemm1(&mut self, origin: &DimMap<u64>) {
        let f_c = (self.bm * self.bn) as u64 * self.acc;
        let g1 = self.g1;
        for mi in 0..self.cm {
            for ki in 0..self.ck {
                for nset in 0..self.r {
                    for _step in 1..g1 {
                        for q in 0..g1 {
                            let from = Self::node(mi, nset * g1 + (q + g1 - 1) % g1, ki);
                            let to = Self::node(mi, nset * g1 + q, ki);
                            self.dsm(f_c);
                            self.trace.primitives.shuffle += f_c;
                            self.edge(from, to, "shuffle", f_c);
                        }
                    }
                }
            }
        }
        let Some(inp) = self.inputs else { return };
        let (bm, bn, bl) = (self.bm, self.bn, self.bl);
        let d = inp.d.as_slice();
        let dcols = inp.d.cols();
        for mi in 0..self.cm {
            for ni in 0..self.cn {
                for ki in 0..self.ck {
                    let q = ni % g1;
                    let nset = ni / g1;
                    let jl = ki * g1 + q;
                    let lcol = origin.l as usize + jl * bl;
                    let b = self.bid(mi, ni, ki);
                    let mut part = std::mem::take(&mut self.e_part[b]);
                    for s in 0..g1 {
                        let src = nset * g1 + (q + g1 - s) % g1;
                        let c = &self.c_full[mi * self.cn + src];
                        let drow0 = origin.n as usize + src * bn;
                        for i in 0..bm {
                            let crow = &c[i * bn..(i + 1) * bn];
                            let out = &mut part[i * bl..(i + 1) * bl];
                            for (jj, &cv) in crow.iter().enumerate() {
                                let drow = &d[(drow0 + jj) * dcols + lcol..][..bl];
                                for (o, &dv) in out.iter_mut().zip(drow) {
                                    *o += cv * dv;
                                }
                            }
                        }
                    }
                    self.e_part[b] = part;
                }
            }
        }
    }

    /// Reduce-scatter over each reduce set, then atomic adds of the owned
    /// chunks into global E.
    fn flush(&mut self, origin: &DimMap<u64>) {
        let (bm, bl, r, g1) = (self.bm, self.bl, self.r, self.g1);
        let elems = bm * bl;
        let bounds: Vec<usize> = (0..=r).map(|c| c * elems / r).collect();
        let l_tiles = self.graph.dims.l as usize / bl;
        for mi in 0..self.cm {
            for jl in 0..self.ck * g1 {
                let ki = jl / g1;
                let q = jl % g1;
                let members: Vec<(usize, usize)> = (0..r).map(|s| (s * g1 + q, self.bid(mi, s * g1 + q, ki))).collect();
                let row0 = origin.m as usize + mi * bm;
                let col0 = origin.l as usize + jl * bl;
                let tile = (row0 / bm) * l_tiles + col0 / bl;
                for c in 0..r {
                    let (lo, hi) = (bounds[c], bounds[c + 1]);
                    let bytes = (hi - lo) as u64 * self.acc;
                    for s in 0..r.saturating_sub(1) {
                        let from = (c + 1 + s) % r;
                        let to = (c + 2 + s) % r;
                        self.dsm(bytes);
                        self.trace.primitives.reduce_scatter += bytes;
                        self.edge(
                            Self::node(mi, members[from].0, ki),
                            Self::node(mi, members[to].0, ki),
                            "reduce_scatter",
                            bytes,
                        );
                    }
                    let store = (hi - lo) as u64 * self.es;
                    self.trace.volume.global += store;
                    self.trace.tensors.entry("E".into()).or_default().store += store;
                    let key = tile * r + c;
                    if self.stored[key] {
                        self.trace.primitives.inter_cluster_reduce += store;
                    }
                    self.stored[key] = true;
                    self.edge(Self::node(mi, members[c].0, ki), "global".into(), "E", store);

                    if self.inputs.is_some() {
                        let out = self.out.as_mut().expect("numeric run has output");
                        for e in lo..hi {
                            let mut v = self.e_part[members[(c + 1) % r].1][e];
                            for s in 0..r - 1 {
                                v += self.e_part[members[(c + 2 + s) % r].1][e];
                            }
                            out.add_at(row0 + e / bl, col0 + e % bl, v);
                        }
                    }
                }
            }
        }
        let alloc = self.e_alloc;
        for _ in 0..self.cm * self.cn * self.ck {
            self.touch(alloc);
        }
        for v in &mut self.e_part {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
    }
}

fn decode(mut idx: u64, grid: &DimMap<u64>) -> DimMap<u64> {
    let mut g = DimMap::splat(0);
    for d in Dim::ALL.into_iter().rev() {
        g[d] = idx % grid[d];
        idx /= grid[d];
    }
    g
}

/// Replays `plan`; with `inputs` the numeric result is produced as well.
pub(crate) fn run<T: Scalar>(
    graph: &ChainGraph,
    device: &DeviceModel,
    plan: &FusionPlan,
    inputs: Option<&ChainInputs<T>>,
    dot: Option<&mut TileGraph>,
) -> Result<Output<T>> {
    let errs = validate_plan(plan, graph, device);
    if !errs.is_empty() {
        return Err(Error::InvalidPlan(errs));
    }
    let dims = graph.dims;
    let geo = plan.geometry(&dims)?;
    if !graph.effective_activation().is_linear() && geo.grid.k > 1 {
        return Err(Error::CapacityExceeded {
            tensor: graph.intermediate().name.clone(),
            floor: Tier::Dsm,
            needed: dims.m * dims.n * dims.accumulator_size,
        });
    }
    let blk = plan.tiles.block;
    let cls = plan.cluster;
    let nacc = if plan.gated_lowering == GatedLowering::DoubledK { 2 } else { 1 };
    let f_c = blk.m * blk.n * dims.accumulator_size;
    let f_ep = blk.m * blk.l * dims.accumulator_size;
    let mut occ = Occupancy::new(cls.blocks());
    let inter = graph.intermediate();
    let output = graph.output();
    let c_map = place_tensor(&inter.name, nacc as u64 * f_c, device, inter.spill_floor, &mut occ)?;
    let e_map = place_tensor(&output.name, f_ep, device, output.spill_floor, &mut occ)?;
    let alloc = |m: &crate::plan::TensorMapping| {
        let mut a = [0u64; 5];
        for t in Tier::ALL {
            a[tier_index(t)] = m.get(t);
        }
        a
    };

    if let Some(inp) = inputs {
        inp.check(graph)?;
    }
    let u = |x: u64| x as usize;
    let blocks = u(cls.blocks());
    let r = u(cls.cls_reduce);
    let mut trace = TrafficCounts::default();
    let mut names = vec!["A", "D", "E"];
    names.extend(if graph.is_gated() { vec!["B0", "B1"] } else { vec!["B"] });
    for n in names {
        trace.tensors.insert(n.to_string(), TensorTraffic::default());
    }
    let mut sim = Sim {
        graph,
        plan,

        inputs,
        out: inputs.map(|_| Matrix::zeros(u(dims.m), u(dims.l))),
        trace,
        recording: dot.is_some(),
        dot,
        cm: u(cls.cls_m),
        cn: u(cls.cls_n),
        ck: u(cls.cls_k),
        g1: u(cls.cls_shuffle),
        r,
        bm: u(blk.m),
        bn: u(blk.n),
        bk: u(blk.k),
        bl: u(blk.l),
        es: dims.element_size,
        acc: dims.accumulator_size,
        nacc,
        c_alloc: alloc(&c_map),
        e_alloc: alloc(&e_map),
        c_acc: Vec::new(),
        c_full: Vec::new(),
        e_part: Vec::new(),
        stored: vec![false; u(dims.m / blk.m) * u(dims.l / blk.l) * r],
    };
    if inputs.is_some() {
        sim.c_acc = vec![vec![T::zero(); nacc * u(blk.m * blk.n)]; blocks];
        sim.c_full = vec![Vec::new(); u(cls.cls_m * cls.cls_n)];
        sim.e_part = vec![vec![T::zero(); u(blk.m * blk.l)]; blocks];
    }

    use Dim::*;
    let temporal = plan.schedule.temporal.clone();
    let nt = temporal.len();
    let trips: Vec<u64> = temporal.iter().map(|d| geo.trips[*d]).collect();
    let pos_a = prefix_pos(&temporal, &[M, K]);
    let pos_b = prefix_pos(&temporal, &[K, N]);
    let pos_d = prefix_pos(&temporal, &[N, L]);
    let pos_e = prefix_pos(&temporal, &[M, L]);
    let pos_c = prefix_pos(&temporal, &[M, N, K]);
    let mode = plan.schedule.reduction_mode();
    let pos_k = plan.schedule.position(K);

    for cluster in 0..geo.clusters() {
        let g = decode(cluster, &geo.grid);
        sim.recording = cluster == 0 && sim.dot.is_some();
        let mut t = vec![0u64; nt];
        let mut first = true;
        let mut changed = 0usize;
        let mut e_origin: Option<DimMap<u64>> = None;
        loop {
            let origin = DimMap::from_fn(|d| {
                let ti = temporal.iter().position(|x| *x == d).map_or(0, |p| t[p]);
                (g[d] + ti) * geo.chunk[d]
            });
            let hit = |pos: Option<usize>| first || matches!(pos, Some(p) if changed <= p);
            if !first && hit(pos_e) {
                sim.flush(e_origin.as_ref().expect("previous point"));
            }
            sim.load_inputs(hit(pos_a), hit(pos_b), hit(pos_d));
            match mode {
                ReductionMode::InnerK => {
                    let p = pos_k.expect("K is temporal");
                    if t[p] == 0 {
                        sim.reset_c();
                    }
                    sim.gemm0(&origin);
                    if t[p] + 1 == trips[p] {
                        sim.all_exchange();
                        sim.gemm1(&origin);
                    }
                }
                ReductionMode::SpatialK | ReductionMode::PartialK => {
                    if hit(pos_c) {
                        sim.reset_c();
                        sim.gemm0(&origin);
                        sim.all_exchange();
                    }
                    sim.gemm1(&origin);
                }
            }
            e_origin = Some(origin);

            let mut next = None;
            for i in (0..nt).rev() {
                t[i] += 1;
                if t[i] < trips[i] {
                    next = Some(i);
                    break;
                }
                t[i] = 0;
            }
            match next {
                Some(i) => {
                    changed = i;
                    first = false;
                }
                None => break,
            }
        }
        sim.flush(e_origin.as_ref().expect("at least one point"));
    }

    Ok(Output {
        e: sim.out,
        trace: sim.trace,
    })
}
