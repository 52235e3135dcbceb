//! GRU cell (reset gate applied before the candidate's recurrent product) and
//! a bidirectional layer over a sequence, with hand-written backward passes.
//!
//! ```text
//! r  = σ(W_r x + U_r h + b_r)
//! z  = σ(W_z x + U_z h + b_z)
//! h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h~
//! ```

use super::{matvec_add, matvec_t_add, outer_add, sigmoid, EngineError, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams<T> {
    pub input: usize,
    pub hidden: usize,
    pub w_r: Tensor<T>,
    pub w_z: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_r: Tensor<T>,
    pub u_z: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_r: Tensor<T>,
    pub b_z: Tensor<T>,
    pub b_h: Tensor<T>,
}

/// Values kept from a forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    cand: Vec<T>,
}

pub const GRU_TENSOR_NAMES: [&str; 9] = ["w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "b_r", "b_z", "b_h"];

impl<T: Real> GruCellParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        GruCellParams {
            input,
            hidden,
            w_r: w(),
            w_z: w(),
            w_h: w(),
            u_r: u(),
            u_z: u(),
            u_h: u(),
            b_r: b(),
            b_z: b(),
            b_h: b(),
        }
    }

    /// Weights uniform in `±1/√hidden`, biases zero.
    pub fn init(input: usize, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(input, hidden);
        for t in [&mut p.w_r, &mut p.w_z, &mut p.w_h, &mut p.u_r, &mut p.u_z, &mut p.u_h] {
            *t = Tensor::uniform(t.shape(), bound, rng);
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.hidden)
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_r, &self.w_z, &self.w_h, &self.u_r, &self.u_z, &self.u_h, &self.b_r, &self.b_z,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.w_r,
            &mut self.w_z,
            &mut self.w_h,
            &mut self.u_r,
            &mut self.u_z,
            &mut self.u_h,
            &mut self.b_r,
            &mut self.b_z,
            &mut self.b_h,
        ]
    }

    fn check(&self, x: &[T], h_prev: &[T]) -> Result<(), EngineError> {
        if x.len() != self.input {
            return Err(EngineError::DimMismatch {
                what: "gru input",
                expected: self.input,
                got: x.len(),
            });
        }
        if h_prev.len() != self.hidden {
            return Err(EngineError::DimMismatch {
                what: "gru hidden state",
                expected: self.hidden,
                got: h_prev.len(),
            });
        }
        Ok(())
    }

    pub fn step(&self, x: &[T], h_prev: &[T]) -> Result<Vec<T>, EngineError> {
        self.check(x, h_prev)?;
        Ok(self.forward_cached(x, h_prev).0)
    }

    pub(crate) fn forward_cached(&self, x: &[T], h_prev: &[T]) -> (Vec<T>, GruStepCache<T>) {
        let (n, i) = (self.hidden, self.input);
        let mut r = self.b_r.data().to_vec();
        matvec_add(self.w_r.data(), n, i, x, &mut r);
        matvec_add(self.u_r.data(), n, n, h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut z = self.b_z.data().to_vec();
        matvec_add(self.w_z.data(), n, i, x, &mut z);
        matvec_add(self.u_z.data(), n, n, h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
        let mut cand = self.b_h.data().to_vec();
        matvec_add(self.w_h.data(), n, i, x, &mut cand);
        matvec_add(self.u_h.data(), n, n, &rh, &mut cand);
        cand.iter_mut().for_each(|v| *v = v.tanh());

        let h: Vec<T> = (0..n)
            .map(|k| (T::one() - z[k]) * h_prev[k] + z[k] * cand[k])
            .collect();
        (
            h,
            GruStepCache {
                x: x.to_vec(),
                h_prev: h_prev.to_vec(),
                r,
                z,
                cand,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` and adds the input and
    /// previous-state gradients into `dx` / `dh_prev`.
    pub(crate) fn backward_step(
        &self,
        c: &GruStepCache<T>,
        dh: &[T],
        grads: &mut GruCellParams<T>,
        dx: &mut [T],
        dh_prev: &mut [T],
    ) {
        let n = self.hidden;
        let i = self.input;
        let one = T::one();
        let mut da_h = vec![T::zero(); n];
        let mut da_z = vec![T::zero(); n];
        for k in 0..n {
            let dcand = dh[k] * c.z[k];
            da_h[k] = dcand * (one - c.cand[k] * c.cand[k]);
            let dz = dh[k] * (c.cand[k] - c.h_prev[k]);
            da_z[k] = dz * c.z[k] * (one - c.z[k]);
            dh_prev[k] += dh[k] * (one - c.z[k]);
        }
        // Candidate path through r ⊙ h.
        let rh: Vec<T> = c.r.iter().zip(&c.h_prev).map(|(&a, &b)| a * b).collect();
        let mut drh = vec![T::zero(); n];
        matvec_t_add(self.u_h.data(), n, n, &da_h, &mut drh);
        let mut da_r = vec![T::zero(); n];
        for k in 0..n {
            dh_prev[k] += drh[k] * c.r[k];
            let dr = drh[k] * c.h_prev[k];
            da_r[k] = dr * c.r[k] * (one - c.r[k]);
        }

        outer_add(grads.w_h.data_mut(), i, &da_h, &c.x);
        outer_add(grads.u_h.data_mut(), n, &da_h, &rh);
        outer_add(grads.w_z.data_mut(), i, &da_z, &c.x);
        outer_add(grads.u_z.data_mut(), n, &da_z, &c.h_prev);
        outer_add(grads.w_r.data_mut(), i, &da_r, &c.x);
        outer_add(grads.u_r.data_mut(), n, &da_r, &c.h_prev);
        for k in 0..n {
            grads.b_h.data_mut()[k] += da_h[k];
            grads.b_z.data_mut()[k] += da_z[k];
            grads.b_r.data_mut()[k] += da_r[k];
        }

        matvec_t_add(self.w_h.data(), n, i, &da_h, dx);
        matvec_t_add(self.w_z.data(), n, i, &da_z, dx);
        matvec_t_add(self.w_r.data(), n, i, &da_r, dx);
        matvec_t_add(self.u_z.data(), n, n, &da_z, dh_prev);
        matvec_t_add(self.u_r.data(), n, n, &da_r, dh_prev);
    }

    /// Runs the cell over `xs` from a zero state, left-to-right or
    /// right-to-left. Returns the hidden state at each position (in position
    /// order) and the step caches in processing order.
    pub(crate) fn run(&self, xs: &[Vec<T>], reverse: bool) -> (Vec<Vec<T>>, Vec<GruStepCache<T>>) {
        let len = xs.len();
        let mut hs = vec![Vec::new(); len];
        let mut caches = Vec::with_capacity(len);
        let mut h = vec![T::zero(); self.hidden];
        for s in 0..len {
            let p = if reverse { len - 1 - s } else { s };
            let (h_new, cache) = self.forward_cached(&xs[p], &h);
            hs[p] = h_new.clone();
            caches.push(cache);
            h = h_new;
        }
        (hs, caches)
    }

    /// Backpropagation through time for [`run`](Self::run). `dhs[p]` is the
    /// loss gradient w.r.t. the output at position `p`; input gradients are
    /// added into `dxs[p]`.
    pub(crate) fn run_backward(
        &self,
        caches: &[GruStepCache<T>],
        dhs: &[&[T]],
        reverse: bool,
        grads: &mut GruCellParams<T>,
        dxs: &mut [Vec<T>],
    ) {
        let len = caches.len();
        let mut carry = vec![T::zero(); self.hidden];
        for s in (0..len).rev() {
            let p = if reverse { len - 1 - s } else { s };
            let dh: Vec<T> = carry.iter().zip(dhs[p]).map(|(&a, &b)| a + b).collect();
            let mut dh_prev = vec![T::zero(); self.hidden];
            self.backward_step(&caches[s], &dh, grads, &mut dxs[p], &mut dh_prev);
            carry = dh_prev;
        }
    }
}

pub fn gru_cell_step<T: Real>(x: &[T], h_prev: &[T], p: &GruCellParams<T>) -> Result<Vec<T>, EngineError> {
    p.step(x, h_prev)
}

/// Forward and backward GRUs over the same input; outputs are `[h_fwd; h_bwd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGruLayer<T> {
    pub fwd: GruCellParams<T>,
    pub bwd: GruCellParams<T>,
}

#[derive(Debug, Clone)]
pub struct BiGruCache<T> {
    fwd: Vec<GruStepCache<T>>,
    bwd: Vec<GruStepCache<T>>,
}

impl<T: Real> BiGruLayer<T> {
    pub fn init(input: usize, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        BiGruLayer {
            fwd: GruCellParams::init(input, hidden, rng),
            bwd: GruCellParams::init(input, hidden, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiGruLayer {
            fwd: GruCellParams::zeros(input, hidden),
            bwd: GruCellParams::zeros(input, hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fwd.input, self.fwd.hidden)
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward(&self, xs: &[Vec<T>]) -> (Vec<Vec<T>>, BiGruCache<T>) {
        let (hf, cf) = self.fwd.run(xs, false);
        let (hb, cb) = self.bwd.run(xs, true);
        let outs = hf
            .into_iter()
            .zip(hb)
            .map(|(mut a, b)| {
                a.extend(b);
                a
            })
            .collect();
        (outs, BiGruCache { fwd: cf, bwd: cb })
    }

    /// Returns input gradients per position.
    pub fn backward(&self, cache: &BiGruCache<T>, douts: &[Vec<T>], grads: &mut BiGruLayer<T>) -> Vec<Vec<T>> {
        let n = self.fwd.hidden;
        let mut dxs = vec![vec![T::zero(); self.fwd.input]; douts.len()];
        let df: Vec<&[T]> = douts.iter().map(|d| &d[..n]).collect();
        let db: Vec<&[T]> = douts.iter().map(|d| &d[n..]).collect();
        self.fwd.run_backward(&cache.fwd, &df, false, &mut grads.fwd, &mut dxs);
        self.bwd.run_backward(&cache.bwd, &db, true, &mut grads.bwd, &mut dxs);
        dxs
    }
}
