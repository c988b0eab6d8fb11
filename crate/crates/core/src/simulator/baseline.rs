//! Two-kernel reference: GEMM0 writes the full intermediate to global, GEMM1
//! reads it back. Both kernels walk row panels and reread their weights per panel.

use crate::analyzer::{TensorTraffic, TrafficCounts, BASELINE_PANEL_ROWS};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::workload::{silu, ChainGraph};

use super::ChainInputs;

fn count(trace: &mut TrafficCounts, tensor: &str, load: u64, store: u64) {
    let t = trace.tensors.entry(tensor.to_string()).or_insert_with(TensorTraffic::default);
    t.load += load;
    t.store += store;
    trace.volume.global += load + store;
}

/// Numeric result and global traffic of the unfused pair of kernels.
pub fn unfused_baseline<T: Scalar>(graph: &ChainGraph, inputs: &ChainInputs<T>) -> Result<(Matrix<T>, TrafficCounts)> {
    inputs.check(graph)?;
    let d = graph.dims;
    let es = d.element_size;
    let (m, n, k, l) = (d.m as usize, d.n as usize, d.k as usize, d.l as usize);
    let panel = BASELINE_PANEL_ROWS as usize;
    let mut trace = TrafficCounts::default();
    let mut c = Matrix::<T>::zeros(m, n);

    // kernel 1
    for r0 in (0..m).step_by(panel) {
        let rows = panel.min(m - r0);
        count(&mut trace, "A", (rows * k) as u64 * es, 0);
        let a = inputs.a.block(r0, 0, rows, k);
        let g = a.matmul(&inputs.b0)?;
        count(&mut trace, if graph.is_gated() { "B0" } else { "B" }, (k * n) as u64 * es, 0);
        let act = match &inputs.b1 {
            Some(b1) => {
                count(&mut trace, "B1", (k * n) as u64 * es, 0);
                g.zip_map(&a.matmul(b1)?, |x, y| silu(x) * y)?
            }
            None => g.map(|x| graph.activation.apply(x)),
        };
        for i in 0..rows {
            for j in 0..n {
                c.set(r0 + i, j, act.get(i, j));
            }
        }
        count(&mut trace, "C", 0, (rows * n) as u64 * es);
    }

    // kernel 2
    let mut e = Matrix::<T>::zeros(m, l);
    for r0 in (0..m).step_by(panel) {
        let rows = panel.min(m - r0);
        count(&mut trace, "C", (rows * n) as u64 * es, 0);
        count(&mut trace, "D", (n * l) as u64 * es, 0);
        let p = c.block(r0, 0, rows, n).matmul(&inputs.d)?;
        for i in 0..rows {
            for j in 0..l {
                e.set(r0 + i, j, p.get(i, j));
            }
        }
        count(&mut trace, "E", 0, (rows * l) as u64 * es);
    }
    Ok((e, trace))
}
