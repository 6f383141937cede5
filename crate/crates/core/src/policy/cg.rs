/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    /// `|(F + damping I) x - b| / |b|`, 0 when `b = 0`.
    pub residual: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Approximately solves `(F + damping I) x = b` given only products `F v`.
pub fn cg_solve<F>(mut fvp: F, b: &[f64], iters: usize, damping: f64) -> CgResult
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bb = dot(b, b);
    if bb == 0.0 {
        return CgResult {
            x: vec![0.0; n],
            residual: 0.0,
            iterations: 0,
        };
    }
    let mut apply = |v: &[f64]| -> Vec<f64> {
        let mut out = fvp(v);
        out.iter_mut().zip(v).for_each(|(o, vi)| *o += damping * vi);
        out
    };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = bb;
    let mut done = 0;
    for _ in 0..iters {
        if rr <= 1e-24 * bb {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
        done += 1;
    }
    let ax = apply(&x);
    let res: f64 = ax.iter().zip(b).map(|(a, bi)| (a - bi) * (a - bi)).sum();
    CgResult {
        x,
        residual: (res / bb).sqrt(),
        iterations: done,
    }
}
