//! LSTM cell with a single concatenated gate matrix, gate order `(i, f, g, o)`.
//!
//! ```text
//! z = [x, h_prev] · W + b
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{sigmoid, Module};
use crate::tensor::{matmul, matmul_nt, matmul_tn_acc, Param, Tensor};

/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `(I + H) × 4H`
    pub weight: Param,
    /// `4H`
    pub bias: Param,
    input_size: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    xh: Vec<f64>,
    /// Post-activation gates, `B × 4H` in `(i, f, g, o)` blocks.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    batch: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input_size: usize, hidden: usize, std: f64, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS);
        Self {
            weight: Param::new(Tensor::randn(&[input_size + hidden, 4 * hidden], std, rng)),
            bias: Param::new(bias),
            input_size,
            hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One step: returns `(h, c, cache)`.
    pub fn forward(
        &self,
        x: &Tensor,
        h_prev: &Tensor,
        c_prev: &Tensor,
    ) -> Result<(Tensor, Tensor, LstmStepCache)> {
        let (inp, hid) = (self.input_size, self.hidden);
        let batch = x.rows();
        if x.shape() != [batch, inp] {
            return shape_err("lstm input", x.shape(), &[batch, inp]);
        }
        if h_prev.shape() != [batch, hid] {
            return shape_err("lstm h_prev", h_prev.shape(), &[batch, hid]);
        }
        if c_prev.shape() != [batch, hid] {
            return shape_err("lstm c_prev", c_prev.shape(), &[batch, hid]);
        }
        let width = inp + hid;
        let mut xh = Vec::with_capacity(batch * width);
        for r in 0..batch {
            xh.extend_from_slice(x.row_slice(r));
            xh.extend_from_slice(h_prev.row_slice(r));
        }
        let mut gates = vec![0.0; batch * 4 * hid];
        matmul(
            &xh,
            self.weight.value.data(),
            batch,
            width,
            4 * hid,
            &mut gates,
        );
        let bias = self.bias.value.data();
        let mut c = vec![0.0; batch * hid];
        let mut h = vec![0.0; batch * hid];
        let mut tanh_c = vec![0.0; batch * hid];
        for r in 0..batch {
            let z = &mut gates[r * 4 * hid..(r + 1) * 4 * hid];
            for (k, zv) in z.iter_mut().enumerate() {
                let pre = *zv + bias[k];
                *zv = if (2 * hid..3 * hid).contains(&k) {
                    libm::tanh(pre)
                } else {
                    sigmoid(pre)
                };
            }
            let cp = c_prev.row_slice(r);
            for j in 0..hid {
                let (i, f, g, o) = (z[j], z[hid + j], z[2 * hid + j], z[3 * hid + j]);
                let cv = f * cp[j] + i * g;
                let tc = libm::tanh(cv);
                c[r * hid + j] = cv;
                tanh_c[r * hid + j] = tc;
                h[r * hid + j] = o * tc;
            }
        }
        let cache = LstmStepCache {
            xh,
            gates,
            c_prev: c_prev.data().to_vec(),
            tanh_c,
            batch,
        };
        Ok((
            Tensor::new(&[batch, hid], h)?,
            Tensor::new(&[batch, hid], c)?,
            cache,
        ))
    }

    /// Given `dL/dh` and `dL/dc` at this step's outputs, accumulates parameter
    /// gradients and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &mut self,
        cache: &LstmStepCache,
        dh: &Tensor,
        dc: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let (inp, hid, batch) = (self.input_size, self.hidden, cache.batch);
        if dh.shape() != [batch, hid] || dc.shape() != [batch, hid] {
            return shape_err("lstm backward", dh.shape(), dc.shape());
        }
        let mut dz = vec![0.0; batch * 4 * hid];
        let mut dc_prev = vec![0.0; batch * hid];
        for r in 0..batch {
            let gates = &cache.gates[r * 4 * hid..(r + 1) * 4 * hid];
            let dzr = &mut dz[r * 4 * hid..(r + 1) * 4 * hid];
            for j in 0..hid {
                let idx = r * hid + j;
                let (i, f, g, o) = (
                    gates[j],
                    gates[hid + j],
                    gates[2 * hid + j],
                    gates[3 * hid + j],
                );
                let tc = cache.tanh_c[idx];
                let dhv = dh.data()[idx];
                let dct = dc.data()[idx] + dhv * o * (1.0 - tc * tc);
                dzr[j] = dct * g * i * (1.0 - i);
                dzr[hid + j] = dct * cache.c_prev[idx] * f * (1.0 - f);
                dzr[2 * hid + j] = dct * i * (1.0 - g * g);
                dzr[3 * hid + j] = dhv * tc * o * (1.0 - o);
                dc_prev[idx] = dct * f;
            }
        }
        let width = inp + hid;
        matmul_tn_acc(
            &cache.xh,
            &dz,
            batch,
            width,
            4 * hid,
            self.weight.grad.data_mut(),
        );
        let bg = self.bias.grad.data_mut();
        for row in dz.chunks(4 * hid) {
            for (b, g) in bg.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dxh = vec![0.0; batch * width];
        matmul_nt(
            &dz,
            self.weight.value.data(),
            batch,
            4 * hid,
            width,
            &mut dxh,
        );
        let xh = Tensor::new(&[batch, width], dxh)?;
        let mut parts = xh.split_cols(&[inp, hid])?;
        let dh_prev = parts.pop().expect("two parts");
        let dx = parts.pop().expect("two parts");
        Ok((dx, dh_prev, Tensor::new(&[batch, hid], dc_prev)?))
    }
}

impl Module for LstmCell {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Single-layer LSTM unrolled over a sequence from a zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub cell: LstmCell,
}

#[derive(Debug, Clone)]
pub struct LstmSequenceCache {
    steps: Vec<LstmStepCache>,
}

impl LstmSequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(input_size: usize, hidden: usize, std: f64, rng: &mut R) -> Self {
        Self {
            cell: LstmCell::new(input_size, hidden, std, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden
    }

    /// Final hidden state after consuming `inputs` (each `B × I`).
    pub fn forward(&self, inputs: &[Tensor]) -> Result<(Tensor, LstmSequenceCache)> {
        let Some(first) = inputs.first() else {
            return shape_err("lstm sequence", &[0], &[1]);
        };
        let batch = first.rows();
        let mut h = Tensor::zeros(&[batch, self.cell.hidden]);
        let mut c = Tensor::zeros(&[batch, self.cell.hidden]);
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (nh, nc, cache) = self.cell.forward(x, &h, &c)?;
            h = nh;
            c = nc;
            steps.push(cache);
        }
        Ok((h, LstmSequenceCache { steps }))
    }

    /// Backpropagates `dL/dh_final` through time. Returns input gradients per step.
    pub fn backward(
        &mut self,
        cache: &LstmSequenceCache,
        dh_final: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let mut dh = dh_final.clone();
        let mut dc = Tensor::zeros(dh.shape());
        let mut dxs = Vec::with_capacity(cache.steps.len());
        for step in cache.steps.iter().rev() {
            let (dx, dh_prev, dc_prev) = self.cell.backward(step, &dh, &dc)?;
            dxs.push(dx);
            dh = dh_prev;
            dc = dc_prev;
        }
        dxs.reverse();
        Ok(dxs)
    }
}

impl Module for Lstm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.cell.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.cell.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = LstmCell::new(3, 4, 0.0, &mut rng);
        cell.bias.value.fill(0.0);
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let h0 = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let (h, c, _) = cell.forward(&x, &h0, &Tensor::zeros(&[2, 4])).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_carries_cell_and_closed_output_hides_it() {
        let hid = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cell = LstmCell::new(2, hid, 0.0, &mut rng);
        let b = cell.bias.value.data_mut();
        b[..hid].fill(-50.0);
        b[hid..2 * hid].fill(50.0);
        b[3 * hid..].fill(-50.0);
        let c_prev = Tensor::from_rows(&[[0.3, -0.7, 1.2]]).unwrap();
        let x = Tensor::from_rows(&[[0.4, -0.1]]).unwrap();
        let (h, c, _) = cell
            .forward(&x, &Tensor::zeros(&[1, hid]), &c_prev)
            .unwrap();
        for (a, b) in c.data().iter().zip(c_prev.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(h.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = LstmCell::new(2, 5, 0.01, &mut rng);
        let b = cell.bias.value.data();
        assert!(b[..5].iter().all(|&v| v == 0.0));
        assert!(b[5..10].iter().all(|&v| v == FORGET_BIAS));
        assert!(b[10..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_of_h_wrt_x_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (inp, hid) = (3, 4);
        let mut cell = LstmCell::new(inp, hid, 0.5, &mut rng);
        let x = Tensor::randn(&[1, inp], 1.0, &mut rng);
        let h0 = Tensor::randn(&[1, hid], 0.5, &mut rng);
        let c0 = Tensor::randn(&[1, hid], 0.5, &mut rng);
        let (_, _, cache) = cell.forward(&x, &h0, &c0).unwrap();
        let step = 1e-5;
        for out in 0..hid {
            let mut dh = Tensor::zeros(&[1, hid]);
            dh.data_mut()[out] = 1.0;
            let (dx, _, _) = cell
                .backward(&cache, &dh, &Tensor::zeros(&[1, hid]))
                .unwrap();
            for k in 0..inp {
                let mut xp = x.clone();
                xp.data_mut()[k] += step;
                let mut xm = x.clone();
                xm.data_mut()[k] -= step;
                let hp = cell.forward(&xp, &h0, &c0).unwrap().0.data()[out];
                let hm = cell.forward(&xm, &h0, &c0).unwrap().0.data()[out];
                let numeric = (hp - hm) / (2.0 * step);
                let analytic = dx.data()[k];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "h[{out}]/x[{k}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn bptt_gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lstm = Lstm::new(2, 4, 0.5, &mut rng);
        let inputs: Vec<Tensor> = (0..3)
            .map(|_| Tensor::randn(&[2, 2], 1.0, &mut rng))
            .collect();
        let coeff = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let report = grad_check(
            &mut lstm,
            |m, backward| {
                let (h, cache) = m.forward(&inputs).unwrap();
                let loss = h.data().iter().zip(coeff.data()).map(|(a, b)| a * b).sum();
                if backward {
                    m.backward(&cache, &coeff).unwrap();
                }
                loss
            },
            &GradCheckConfig::default(),
        );
        assert!(report.passed, "{report:?}");
    }
}
