//! Reverse-mode automatic differentiation over `C × H × W` tensors.
//!
//! All network forward passes in this crate are built on a small define-by-run
//! tape: every operation eagerly computes its value and, when the tape is
//! recording, registers a closure that propagates the upstream gradient to its
//! inputs. Inference runs on a non-recording tape so the encoder and decoder
//! share one forward code path.
//!
//! Tensors are `f64` throughout. Gradient checks in the test suite compare
//! analytic gradients against central finite differences, which needs more
//! headroom than `f32` provides.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array3, Axis, Zip};

mod conv;
mod ops;

pub use conv::{conv2d_shape, Conv2dSpec};

/// The tensor type used by the tape: channels × height × width.
pub type Arr = Array3<f64>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Arr, &mut GradSink)>;

struct Node {
    value: Rc<Arr>,
    backward: Option<BackwardFn>,
}

/// Gradient accumulator indexed by node id.
pub struct GradSink {
    grads: Vec<Option<Arr>>,
}

impl GradSink {
    fn new(n: usize) -> Self {
        GradSink {
            grads: (0..n).map(|_| None).collect(),
        }
    }

    /// Accumulate a gradient contribution for `v`.
    pub fn add(&mut self, v: Var, g: Arr) {
        match &mut self.grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn take(&mut self, id: usize) -> Option<Arr> {
        self.grads[id].take()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.grads[v.0].as_ref()
    }
}

/// A gradient tape. Create one per forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Tape {
    /// A recording tape for training.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A non-recording tape: forward values only, no backward closures.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Insert a leaf holding `value`. Leaves receive gradients but do not
    /// propagate further.
    pub fn leaf(&self, value: Arr) -> Var {
        self.push(Rc::new(value), None)
    }

    /// Insert a leaf sharing an existing array (no copy).
    pub fn leaf_shared(&self, value: Rc<Arr>) -> Var {
        self.push(value, None)
    }

    /// The value held by `v`.
    pub fn value(&self, v: Var) -> Rc<Arr> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    /// Shape of the value held by `v`.
    pub fn shape(&self, v: Var) -> [usize; 3] {
        let val = self.value(v);
        let d = val.dim();
        [d.0, d.1, d.2]
    }

    /// Extract a scalar from a `(1,1,1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1, 1), "scalar() on non-scalar node");
        val[(0, 0, 0)]
    }

    fn push(&self, value: Rc<Arr>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            backward: if self.recording { backward } else { None },
        });
        Var(nodes.len() - 1)
    }

    /// Run the backward pass from scalar node `loss`, seeding with 1.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert!(
            self.recording,
            "backward() called on a non-recording tape"
        );
        assert_eq!(
            nodes[loss.0].value.dim(),
            (1, 1, 1),
            "backward() expects a scalar loss node"
        );
        let mut sink = GradSink::new(nodes.len());
        sink.add(loss, ndarray::arr3(&[[[1.0f64]]]));
        for id in (0..=loss.0).rev() {
            let Some(g) = sink.take(id) else { continue };
            if let Some(back) = &nodes[id].backward {
                back(&g, &mut sink);
            }
            sink.grads[id] = Some(g);
        }
        Gradients { grads: sink.grads }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Broadcast two shapes; each axis must match or be 1 on one side.
fn broadcast_shape(a: [usize; 3], b: [usize; 3]) -> [usize; 3] {
    let mut out = [0usize; 3];
    for i in 0..3 {
        out[i] = match (a[i], b[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => panic!("incompatible broadcast shapes {a:?} vs {b:?} ({x} vs {y})"),
        };
    }
    out
}

/// Sum `g` down to `shape` (inverse of broadcasting).
fn reduce_to(g: &Arr, shape: [usize; 3]) -> Arr {
    let gd = g.dim();
    let gshape = [gd.0, gd.1, gd.2];
    if gshape == shape {
        return g.clone();
    }
    let mut out = g.clone();
    for ax in 0..3 {
        if shape[ax] == 1 && out.len_of(Axis(ax)) != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn dims(a: &Arr) -> [usize; 3] {
    let d = a.dim();
    [d.0, d.1, d.2]
}

/// Elementwise combine with broadcasting.
fn zip_broadcast(a: &Arr, b: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
    let sh = broadcast_shape(dims(a), dims(b));
    let av = a.broadcast((sh[0], sh[1], sh[2])).expect("broadcast a");
    let bv = b.broadcast((sh[0], sh[1], sh[2])).expect("broadcast b");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

/// Central-difference gradient of `f` at `x`, one entry at a time.
///
/// Used by gradient-check tests to validate the analytic backward pass.
pub fn numeric_gradient(mut f: impl FnMut(&Arr) -> f64, x: &Arr, step: f64) -> Arr {
    let mut grad = Arr::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let fp = f(&probe);
        probe[idx] = orig - step;
        let fm = f(&probe);
        probe[idx] = orig;
        grad[idx] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Largest relative error between `analytic` and `numeric`, with an absolute
/// floor so near-zero entries do not blow up the ratio.
pub fn max_relative_error(analytic: &Arr, numeric: &Arr, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    Zip::from(analytic).and(numeric).for_each(|&a, &n| {
        let denom = a.abs().max(n.abs()).max(floor);
        worst = worst.max((a - n).abs() / denom);
    });
    worst
}
