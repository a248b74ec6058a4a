//! Monotone coupling of one-dimensional marginals.
//!
//! For atoms on the real line and any cost that is convex in the
//! displacement (squared distance in particular), the optimal plan matches
//! quantiles: sort both supports and sweep once, always pairing the lowest
//! unexhausted source atom with the lowest unexhausted target atom.

/// Computes the monotone plan between positive weights `p` on `src` and `q`
/// on `dst`.  Both weight vectors must carry (near-)identical total mass;
/// the caller is responsible for reconciliation.  Ties in value are broken
/// by original index, so the result is deterministic.
pub(crate) fn monotone_plan(
    src: &[f64],
    dst: &[f64],
    p: &[f64],
    q: &[f64],
) -> Vec<(usize, usize, f64)> {
    debug_assert_eq!(src.len(), p.len());
    debug_assert_eq!(dst.len(), q.len());

    let order_src = sorted_order(src);
    let order_dst = sorted_order(dst);

    let mut entries = Vec::with_capacity(p.len() + q.len());
    let mut a = 0;
    let mut b = 0;
    let mut ra = p[order_src[0]];
    let mut rb = q[order_dst[0]];
    loop {
        let f = ra.min(rb);
        if f > 0.0 {
            entries.push((order_src[a], order_dst[b], f));
        }
        ra -= f;
        rb -= f;
        let mut advanced = false;
        if ra <= 0.0 && a + 1 < p.len() {
            a += 1;
            ra = p[order_src[a]];
            advanced = true;
        }
        if rb <= 0.0 && b + 1 < q.len() {
            b += 1;
            rb = q[order_dst[b]];
            advanced = true;
        }
        if !advanced {
            // Both supports are at their final atom; any leftover on one
            // side is total-mass rounding and is dropped.
            debug_assert!(ra.max(rb) < 1e-9, "leftover mass {}", ra.max(rb));
            break;
        }
    }
    entries
}

/// Indices that sort `values` ascending, stably: equal values keep their
/// original relative order.
fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    order
}
