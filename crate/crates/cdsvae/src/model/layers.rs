//! Small trainable building blocks: linear layers and an LSTM cell.

use rand::Rng;

use crate::autodiff::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Fully connected layer, x[M,in] -> x W + b with W[in,out].
#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f32).sqrt();
        let w = store.add(
            &format!("{prefix}.w"),
            Tensor::uniform(&[in_dim, out_dim], bound, rng),
        )?;
        let b = store.add(&format!("{prefix}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    /// Looks the layer up in an existing store (checkpoint load).
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = store
            .by_name(&format!("{prefix}.w"))
            .ok_or_else(|| crate::error::Error::contract(format!("missing param {prefix}.w")))?;
        let b = store
            .by_name(&format!("{prefix}.b"))
            .ok_or_else(|| crate::error::Error::contract(format!("missing param {prefix}.b")))?;
        let dims = store.get(w).dims().to_vec();
        Ok(Linear {
            w,
            b,
            in_dim: dims[0],
            out_dim: dims[1],
        })
    }

    pub fn apply<'t>(&self, bound: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let rows = x.dims()[0];
        x.matmul(bound.get(self.w))?
            .add(bound.get(self.b).broadcast_rows(rows)?)
    }
}

/// LSTM cell over batched rows. Gate layout along the 4h axis is
/// [input, forget, cell, output]; the forget bias starts at 1 so memory is
/// initially retained.
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f32).sqrt();
        let w_ih = store.add(
            &format!("{prefix}.w_ih"),
            Tensor::uniform(&[input_dim, 4 * hidden], bound, rng),
        )?;
        let w_hh = store.add(
            &format!("{prefix}.w_hh"),
            Tensor::uniform(&[hidden, 4 * hidden], bound, rng),
        )?;
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for v in bias.data_mut()[hidden..2 * hidden].iter_mut() {
            *v = 1.0;
        }
        let b = store.add(&format!("{prefix}.b"), bias)?;
        Ok(LstmCell {
            w_ih,
            w_hh,
            b,
            input_dim,
            hidden,
        })
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .by_name(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| crate::error::Error::contract(format!("missing param {prefix}.{suffix}")))
        };
        let w_ih = get("w_ih")?;
        let w_hh = get("w_hh")?;
        let b = get("b")?;
        let input_dim = store.get(w_ih).dims()[0];
        let hidden = store.get(w_hh).dims()[0];
        Ok(LstmCell {
            w_ih,
            w_hh,
            b,
            input_dim,
            hidden,
        })
    }

    /// Fresh zero hidden and cell state for a batch.
    pub fn zero_state<'t>(&self, tape: &'t Tape, batch: usize) -> (Var<'t>, Var<'t>) {
        let h = tape.leaf(&Tensor::zeros(&[batch, self.hidden]));
        let c = tape.leaf(&Tensor::zeros(&[batch, self.hidden]));
        (h, c)
    }

    /// One step: (h, c) x input -> (h', c').
    pub fn step<'t>(
        &self,
        bound: &BoundParams<'t>,
        x: Var<'t>,
        h: Var<'t>,
        c: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let rows = x.dims()[0];
        let gates = x
            .matmul(bound.get(self.w_ih))?
            .add(h.matmul(bound.get(self.w_hh))?)?
            .add(bound.get(self.b).broadcast_rows(rows)?)?;
        let hsz = self.hidden;
        let i = gates.slice_axis(1, 0, hsz)?.sigmoid()?;
        let f = gates.slice_axis(1, hsz, hsz)?.sigmoid()?;
        let g = gates.slice_axis(1, 2 * hsz, hsz)?.tanh()?;
        let o = gates.slice_axis(1, 3 * hsz, hsz)?.sigmoid()?;
        let c_next = f.mul(c)?.add(i.mul(g)?)?;
        let h_next = o.mul(c_next.tanh()?)?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 3, 2, &mut rng).unwrap();
        let w = store.by_name("l.w").unwrap();
        store.set(w, Tensor::zeros(&[3, 2])).unwrap();
        let b = store.by_name("l.b").unwrap();
        store
            .set(b, Tensor::new(vec![2], vec![0.5, -0.25]).unwrap())
            .unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = tape.leaf(&Tensor::uniform(&[4, 3], 1.0, &mut rng));
        let y = lin.apply(&bound, x).unwrap().value();
        for r in 0..4 {
            assert_eq!(y.at2(r, 0), 0.5);
            assert_eq!(y.at2(r, 1), -0.25);
        }
    }

    #[test]
    fn lstm_zero_input_zero_state_keeps_hidden_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 5, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let (mut h, mut c) = cell.zero_state(&tape, 2);
        let x = tape.leaf(&Tensor::zeros(&[2, 3]));
        for _ in 0..50 {
            let (h2, c2) = cell.step(&bound, x, h, c).unwrap();
            h = h2;
            c = c2;
        }
        // tanh-squashed output stays in (-1, 1)
        assert!(h.value().data().iter().all(|v| v.abs() < 1.0));
        assert!(c.value().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lstm_step_gradients_check_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 4, 3, &mut rng).unwrap();
        let report = grad_check(&store, 1e-3, 1e-3, |tape, bound| {
            let x = tape.leaf_from_vec(vec![2, 4], vec![0.5, -0.3, 0.8, 0.1, -0.6, 0.9, 0.2, -0.4])?;
            let (h0, c0) = cell.zero_state(tape, 2);
            let (h1, c1) = cell.step(bound, x, h0, c0)?;
            let (h2, _c2) = cell.step(bound, x, h1, c1)?;
            h2.square()?.sum_all()
        })
        .unwrap();
        assert!(report.passed(), "max err {}", report.max_rel_err);
    }
}
