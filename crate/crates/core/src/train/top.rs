//! Plaintext top models resident at B. They consume the restored `Z` and
//! return `dL/dZ`; their own parameters train with float momentum SGD.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::party::PartyRng;

/// Shape of a top model.
///
/// `a = Z + b0`, then `relu(a)` if `input_relu`, then one ReLU dense layer
/// per `hidden` width, then a final dense layer to `outputs` logits. With
/// neither `input_relu` nor hidden layers the logits are `a` itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopSpec {
    pub input: usize,
    pub input_relu: bool,
    pub hidden: Vec<usize>,
    /// One sigmoid output for binary tasks, else one softmax output per class.
    pub outputs: usize,
}

pub fn outputs_for(classes: usize) -> usize {
    if classes <= 2 {
        1
    } else {
        classes
    }
}

impl TopSpec {
    /// Bias plus sigmoid.
    pub fn lr() -> TopSpec {
        TopSpec { input: 1, input_relu: false, hidden: Vec::new(), outputs: 1 }
    }

    /// Bias plus softmax.
    pub fn mlr(classes: usize) -> TopSpec {
        TopSpec { input: classes, input_relu: false, hidden: Vec::new(), outputs: classes }
    }

    /// The source layer is the first hidden layer of `width` units.
    pub fn mlp(width: usize, classes: usize) -> TopSpec {
        TopSpec { input: width, input_relu: true, hidden: Vec::new(), outputs: outputs_for(classes) }
    }

    /// Dense network over an `input`-wide activation with `layers` hidden
    /// layers.
    pub fn deep(input: usize, layers: usize, width: usize, classes: usize) -> TopSpec {
        TopSpec { input, input_relu: false, hidden: vec![width; layers], outputs: outputs_for(classes) }
    }

    fn has_dense(&self) -> bool {
        self.input_relu || !self.hidden.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.outputs == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("top model with an empty layer".into()));
        }
        if !self.has_dense() && self.input != self.outputs {
            return Err(Error::Config(format!("bias-only head needs input {} == outputs {}", self.input, self.outputs)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    w: Array2<f64>,
    b: Array1<f64>,
    vw: Array2<f64>,
    vb: Array1<f64>,
}

/// Result of one training step.
#[derive(Clone, Debug)]
pub struct TopStep {
    /// Mean loss over the batch.
    pub loss: f64,
    /// `dL/dZ` of the mean loss, `batch x input`.
    pub grad_z: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopModel {
    spec: TopSpec,
    b0: Array1<f64>,
    vb0: Array1<f64>,
    dense: Vec<Dense>,
}

struct Trace {
    a0: Array2<f64>,
    /// Input of each dense layer.
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_mask(d: &mut Array2<f64>, pre: &Array2<f64>) {
    d.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

impl TopModel {
    /// Dense weights are uniform on `±1/sqrt(fan_in)`; biases start at zero.
    pub fn new(spec: TopSpec, rng: &mut PartyRng) -> Result<TopModel> {
        spec.validate()?;
        let mut dense = Vec::new();
        if spec.has_dense() {
            let mut dims = vec![spec.input];
            dims.extend(&spec.hidden);
            dims.push(spec.outputs);
            for pair in dims.windows(2) {
                let (i, o) = (pair[0], pair[1]);
                let h = 1.0 / (i as f64).sqrt();
                let w = Array2::from_shape_fn((i, o), |_| rng.gen_range(-h..=h));
                dense.push(Dense { vw: Array2::zeros((i, o)), w, b: Array1::zeros(o), vb: Array1::zeros(o) });
            }
        }
        Ok(TopModel { b0: Array1::zeros(spec.input), vb0: Array1::zeros(spec.input), spec, dense })
    }

    /// Sets every hidden layer's bias to `b`.
    pub fn with_hidden_bias(mut self, b: f64) -> TopModel {
        let n = self.dense.len().saturating_sub(1);
        for d in &mut self.dense[..n] {
            d.b.fill(b);
        }
        self
    }

    pub fn spec(&self) -> &TopSpec {
        &self.spec
    }

    fn trace(&self, z: &Array2<f64>) -> Result<Trace> {
        if z.ncols() != self.spec.input {
            return Err(Error::Shape(format!("top model input has {} columns, expects {}", z.ncols(), self.spec.input)));
        }
        let a0 = z + &self.b0;
        let mut h = if self.spec.input_relu { relu(&a0) } else { a0.clone() };
        let mut inputs = Vec::with_capacity(self.dense.len());
        for (l, d) in self.dense.iter().enumerate() {
            let pre = h.dot(&d.w) + &d.b;
            inputs.push(h);
            h = if l + 1 == self.dense.len() { pre } else { relu(&pre) };
        }
        Ok(Trace { a0, inputs, logits: h })
    }

    /// Class probabilities, `batch x outputs`.
    pub fn predict(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.probabilities(&self.trace(z)?.logits))
    }

    /// Sigmoid for one output, row-wise softmax otherwise.
    fn probabilities(&self, logits: &Array2<f64>) -> Array2<f64> {
        if self.spec.outputs == 1 {
            return logits.mapv(|l| 1.0 / (1.0 + (-l).exp()));
        }
        let mut p = logits.clone();
        for mut row in p.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        p
    }

    /// Mean loss and `dL/dlogits` for the batch.
    fn loss_grad(&self, logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
        let n = logits.nrows();
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        let k = self.spec.outputs;
        if labels.iter().any(|&y| y >= k.max(2)) {
            return Err(Error::Config(format!("label outside 0..{}", k.max(2))));
        }
        let p = self.probabilities(logits);
        let mut loss = 0.0;
        let mut g = p.clone();
        for (i, &y) in labels.iter().enumerate() {
            if k == 1 {
                let l = logits[[i, 0]];
                // softplus(l) - y*l, stable for large |l|
                loss += l.max(0.0) + (-l.abs()).exp().ln_1p() - y as f64 * l;
                g[[i, 0]] -= y as f64;
            } else {
                loss -= p[[i, y]].max(1e-300).ln();
                g[[i, y]] -= 1.0;
            }
        }
        g /= n as f64;
        Ok((loss / n as f64, g))
    }

    /// Mean loss without updating.
    pub fn loss(&self, z: &Array2<f64>, labels: &[usize]) -> Result<f64> {
        let t = self.trace(z)?;
        Ok(self.loss_grad(&t.logits, labels)?.0)
    }

    /// Forward, loss, backward and one momentum SGD update of the top
    /// parameters: `v <- momentum * v + lr * g; p <- p - v`.
    pub fn step(&mut self, z: &Array2<f64>, labels: &[usize], lr: f64, momentum: f64) -> Result<TopStep> {
        let t = self.trace(z)?;
        let (loss, mut d) = self.loss_grad(&t.logits, labels)?;
        let mut grads = Vec::with_capacity(self.dense.len());
        for l in (0..self.dense.len()).rev() {
            let input = &t.inputs[l];
            grads.push((input.t().dot(&d), d.sum_axis(Axis(0))));
            let mut dh = d.dot(&self.dense[l].w.t());
            if l > 0 {
                // input of layer l is relu of layer l-1's pre-activation
                let pre = t.inputs[l - 1].dot(&self.dense[l - 1].w) + &self.dense[l - 1].b;
                relu_mask(&mut dh, &pre);
            }
            d = dh;
        }
        if self.spec.input_relu {
            relu_mask(&mut d, &t.a0);
        }
        let gb0 = d.sum_axis(Axis(0));
        for (dense, (gw, gb)) in self.dense.iter_mut().rev().zip(grads) {
            dense.vw = &dense.vw * momentum + &(gw * lr);
            dense.vb = &dense.vb * momentum + &(gb * lr);
            dense.w -= &dense.vw;
            dense.b -= &dense.vb;
        }
        self.vb0 = &self.vb0 * momentum + &(gb0 * lr);
        self.b0 -= &self.vb0;
        Ok(TopStep { loss, grad_z: d })
    }

    /// Every parameter and velocity in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.b0.iter().chain(self.vb0.iter()).copied().collect();
        for d in &self.dense {
            out.extend(d.w.iter().chain(d.b.iter()).chain(d.vw.iter()).chain(d.vb.iter()));
        }
        out
    }

    pub fn load_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.to_flat().len() {
            return Err(Error::Malformed(format!("top model state has {} values", v.len())));
        }
        let mut it = v.iter().copied();
        let mut fill = |xs: &mut dyn Iterator<Item = &mut f64>| xs.for_each(|x| *x = it.next().expect("length checked"));
        fill(&mut self.b0.iter_mut());
        fill(&mut self.vb0.iter_mut());
        for d in &mut self.dense {
            fill(&mut d.w.iter_mut());
            fill(&mut d.b.iter_mut());
            fill(&mut d.vw.iter_mut());
            fill(&mut d.vb.iter_mut());
        }
        Ok(())
    }
}
