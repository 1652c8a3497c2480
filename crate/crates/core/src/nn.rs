//! Dense and gated-recurrent layers built on the tape.

use crate::numerics::{Bound, ParamId, ParamStore, RngStream, Tape, Var};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        let w = store.add_glorot(&format!("{name}.w"), in_dim, out_dim, rng);
        let b = store.add_zeros(&format!("{name}.b"), &[out_dim]);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, t: &Tape<'_>, p: &Bound, x: Var) -> Result<Var> {
        let y = t.matmul(x, p[self.w])?;
        t.add_row(y, p[self.b])
    }
}

/// Gated recurrent unit with reset (`r`), update (`u`) and candidate (`n`)
/// gates:
///
/// ```text
/// r  = σ(W_r x + U_r h + b_r)
/// u  = σ(W_u x + U_u h + b_u)
/// n  = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    input: Linear,
    recur: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut RngStream) -> Self {
        Gru {
            input: Linear::new(store, &format!("{name}.x"), in_dim, 3 * hidden, rng),
            recur: Linear::new(store, &format!("{name}.h"), hidden, 3 * hidden, rng),
            hidden,
        }
    }

    pub fn step(&self, t: &Tape<'_>, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gx = self.input.forward(t, p, x)?;
        let gh = self.recur.forward(t, p, h)?;
        let rz_x = t.slice(gx, 0, 2 * hd)?;
        let rz_h = t.slice(gh, 0, 2 * hd)?;
        let rz = t.add(rz_x, rz_h)?;
        let rz = t.sigmoid(rz);
        let r = t.slice(rz, 0, hd)?;
        let u = t.slice(rz, hd, hd)?;
        let n_x = t.slice(gx, 2 * hd, hd)?;
        let n_h = t.slice(gh, 2 * hd, hd)?;
        let gated = t.mul(r, n_h)?;
        let pre = t.add(n_x, gated)?;
        let n = t.tanh(pre);
        let diff = t.sub(h, n)?;
        let keep = t.mul(u, diff)?;
        t.add(n, keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn gru_rollout_gradients() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(21, 0);
        let gru = Gru::new(&mut store, "g", 3, 5, &mut rng);
        let head = Linear::new(&mut store, "o", 5, 2, &mut rng);
        let report = grad_check(&store, 1e-5, None, |t, p| {
            let mut h = t.row(vec![0.1, -0.2, 0.3, 0.0, 0.05]);
            let x = t.row(vec![0.5, -1.0, 0.25]);
            for _ in 0..4 {
                h = gru.step(t, p, x, h)?;
            }
            let y = head.forward(t, p, h)?;
            let sq = t.square(y);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn gru_keeps_hidden_when_update_gate_saturates() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(1, 0);
        let gru = Gru::new(&mut store, "g", 2, 3, &mut rng);
        // push the update-gate bias very high: h' ≈ h
        let b = store.id_of("g.x.b").unwrap();
        for v in &mut store.get_mut(b).values[3..6] {
            *v = 50.0;
        }
        let t = Tape::new();
        let p = t.bind(&store);
        let h = t.row(vec![0.3, -0.4, 0.9]);
        let x = t.row(vec![1.0, 1.0]);
        let h2 = gru.step(&t, &p, x, h).unwrap();
        for (a, b) in t.value(h2).iter().zip([0.3, -0.4, 0.9]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
