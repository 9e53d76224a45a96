//! Reverse-mode differentiation over whole-tensor operations.
//!
//! A [`Tape`] records each operation as a node holding its output value.
//! [`Tape::backward`] seeds the chosen scalar with 1 and walks the nodes in
//! reverse creation order, which is a valid topological order because a node
//! can only reference nodes created before it. Leaves shared by several
//! branches (the decoder parameters used by both paths) accumulate the
//! gradients of every branch.

use crate::mask::{LabelMask, IGNORE};
use crate::numeric::{Real, Tensor};

use super::kernels::{
    avg_pool2, avg_pool2_backward, conv2d, conv2d_backward, upsample2, upsample2_backward,
    ConvGeometry,
};
use super::loss::{cross_entropy_value, ProbabilityMap, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Relu(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Add(Var, Var),
    CrossEntropy {
        logits: Var,
        mask: LabelMask,
        probs: ProbabilityMap<T>,
    },
    WeightedSum(Vec<(Var, T)>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; `None` when `var` does not influence the root.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads[var.0].take()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Scalar value of a rank-1, length-1 node.
    pub fn scalar(&self, var: Var) -> T {
        self.nodes[var.0].value.data()[0]
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Var {
        let value = conv2d(self.value(input), self.value(weight), self.value(bias), geom);
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let value = avg_pool2(self.value(x));
        self.push(value, Op::AvgPool2(x))
    }

    pub fn upsample2(&mut self, x: Var, height: usize, width: usize) -> Var {
        let value = upsample2(self.value(x), height, width);
        self.push(value, Op::Upsample2(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!(va.shape(), vb.shape());
        let value = Tensor::from_fn(va.shape().to_vec(), |i| va.data()[i] + vb.data()[i]);
        self.push(value, Op::Add(a, b))
    }

    /// Softmax over the class axis of `logits` followed by ignore-aware
    /// mean cross-entropy against `mask`. Produces a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, mask: &LabelMask) -> crate::Result<Var> {
        let probs = ProbabilityMap::from_logits(self.value(logits));
        let loss = cross_entropy_value(&probs, mask)?;
        Ok(self.push(
            Tensor::new(vec![1], vec![loss])?,
            Op::CrossEntropy {
                logits,
                mask: mask.clone(),
                probs,
            },
        ))
    }

    /// `Σ wₖ·xₖ` over scalar nodes, summed left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut total = T::zero();
        for &(v, w) in terms {
            total += T::of(w) * self.scalar(v);
        }
        let terms = terms.iter().map(|&(v, w)| (v, T::of(w))).collect();
        self.push(
            Tensor::new(vec![1], vec![total]).expect("scalar"),
            Op::WeightedSum(terms),
        )
    }

    /// Gradient of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_fn(self.value(root).shape().to_vec(), |_| T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let cg = conv2d_backward(self.value(*input), self.value(*weight), &g, *geom);
                    accumulate(&mut grads[input.0], cg.input);
                    accumulate(&mut grads[weight.0], cg.weight);
                    accumulate(&mut grads[bias.0], cg.bias);
                }
                Op::Relu(x) => {
                    let out = &node.value;
                    let gx = Tensor::from_fn(out.shape().to_vec(), |i| {
                        if out.data()[i] > T::zero() {
                            g.data()[i]
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::AvgPool2(x) => {
                    let gx = avg_pool2_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Upsample2(x) => {
                    let gx = upsample2_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::CrossEntropy {
                    logits,
                    mask,
                    probs,
                } => {
                    let count = mask.labels().iter().filter(|&&m| m != IGNORE).count();
                    let classes = probs.classes();
                    let plane = probs.positions();
                    let mut gl = Tensor::zeros(vec![classes, probs.height(), probs.width()]);
                    if count > 0 {
                        let scale = g.data()[0] / T::of(count as f64);
                        let floor = T::of(PROB_FLOOR);
                        let gd = gl.data_mut();
                        for (i, &label) in mask.labels().iter().enumerate() {
                            if label == IGNORE || probs.prob(label as usize, i) < floor {
                                continue;
                            }
                            for k in 0..classes {
                                let target = if k == label as usize { T::one() } else { T::zero() };
                                gd[k * plane + i] = scale * (probs.prob(k, i) - target);
                            }
                        }
                    }
                    accumulate(&mut grads[logits.0], gl);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        // zero-weight terms contribute nothing, not even signed zeros
                        if w != T::zero() {
                            let gv = Tensor::new(vec![1], vec![w * g.data()[0]]).expect("scalar");
                            accumulate(&mut grads[v.0], gv);
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rand(shape: Vec<usize>, rng: &mut SplitMix64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    fn loss_of(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, mask: &LabelMask) -> f64 {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let c = tape.conv2d(xv, wv, bv, ConvGeometry { stride: 1, pad: 1 });
        let r = tape.relu(c);
        let p = tape.avg_pool2(r);
        let u = tape.upsample2(p, 3, 4);
        let s = tape.add(u, c);
        let l = tape.cross_entropy(s, mask).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn chain_matches_finite_differences() {
        let mut rng = SplitMix64::new(6);
        let x = rand(vec![2, 3, 4], &mut rng);
        let w = rand(vec![2, 2, 3, 3], &mut rng);
        let b = rand(vec![2], &mut rng);
        let mask = LabelMask::new(3, 4, vec![0, 1, 255, 1, 0, 0, 1, 1, 255, 0, 1, 0]).unwrap();

        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let c = tape.conv2d(xv, wv, bv, ConvGeometry { stride: 1, pad: 1 });
        let r = tape.relu(c);
        let p = tape.avg_pool2(r);
        let u = tape.upsample2(p, 3, 4);
        let s = tape.add(u, c);
        let l = tape.cross_entropy(s, &mask).unwrap();
        let grads = tape.backward(l);

        let h = 1e-6;
        for (var, base) in [(xv, &x), (wv, &w), (bv, &b)] {
            let analytic = grads.get(var).unwrap();
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus.data_mut()[i] += h;
                let mut minus = base.clone();
                minus.data_mut()[i] -= h;
                let (fp, fm) = if var == xv {
                    (loss_of(&plus, &w, &b, &mask), loss_of(&minus, &w, &b, &mask))
                } else if var == wv {
                    (loss_of(&x, &plus, &b, &mask), loss_of(&x, &minus, &b, &mask))
                } else {
                    (loss_of(&x, &w, &plus, &mask), loss_of(&x, &w, &minus, &mask))
                };
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic.data()[i];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                    "{a} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn shared_leaf_accumulates_and_zero_weight_is_inert() {
        let mask = LabelMask::new(1, 2, vec![1, 0]).unwrap();
        let build = |w_second: f64| {
            let mut tape = Tape::new();
            let w = tape.leaf(Tensor::new(vec![2, 2, 1, 1], vec![0.3, -0.2, 0.5, 0.1]).unwrap());
            let b = tape.leaf(Tensor::zeros(vec![2]));
            let x1 = tape.leaf(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
            let x2 = tape.leaf(Tensor::new(vec![2, 1, 2], vec![0.2, 0.1, 0.7, -0.4]).unwrap());
            let g = ConvGeometry { stride: 1, pad: 0 };
            let o1 = tape.conv2d(x1, w, b, g);
            let o2 = tape.conv2d(x2, w, b, g);
            let l1 = tape.cross_entropy(o1, &mask).unwrap();
            let l2 = tape.cross_entropy(o2, &mask).unwrap();
            let total = tape.weighted_sum(&[(l1, 1.0), (l2, w_second)]);
            let grads = tape.backward(total);
            (grads.get(w).unwrap().clone(), tape.scalar(total))
        };
        let (g_zero, _) = build(0.0);
        let (g_one, _) = build(1.0);

        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(vec![2, 2, 1, 1], vec![0.3, -0.2, 0.5, 0.1]).unwrap());
        let b = tape.leaf(Tensor::zeros(vec![2]));
        let x1 = tape.leaf(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
        let o1 = tape.conv2d(x1, w, b, ConvGeometry { stride: 1, pad: 0 });
        let l1 = tape.cross_entropy(o1, &mask).unwrap();
        let main_only = tape.backward(l1).get(w).unwrap().clone();

        assert_eq!(g_zero, main_only);
        assert_ne!(g_one, main_only);
    }

    #[test]
    fn fully_ignored_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 1, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let l = tape
            .cross_entropy(x, &LabelMask::filled(1, 2, 255))
            .unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let grads = tape.backward(l);
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 0.0));
    }
}
