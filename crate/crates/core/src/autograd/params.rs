use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Arr, Grads, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-1/√fan_in, 1/√fan_in]`, with `fan_in` the first axis length.
    FanIn,
    /// Uniform on `[-1/√fan_in, 1/√fan_in]` for an explicit fan-in.
    FanInOf(usize),
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Arc<Arr>,
}

/// Named trainable arrays of a model, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Arr) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param { name, value: Arc::new(value.as_standard_layout().into_owned()) });
        ParamId(self.params.len() - 1)
    }

    pub fn init(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn | Init::FanInOf(_) => {
                let fan_in = match init {
                    Init::FanInOf(f) => f,
                    _ => shape[0],
                };
                let a = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..=a)).collect()
            }
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        self.add(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Arr {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: Arr) {
        assert_eq!(value.shape(), self.params[id.0].value.shape(), "parameter {} shape", self.params[id.0].name);
        self.params[id.0].value = Arc::new(value.as_standard_layout().into_owned());
    }

    /// Mutable access; copies the array first if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Arr {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, p) in self.params.iter().enumerate() {
            if flat < p.value.len() {
                return (i, flat);
            }
            flat -= p.value.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Parameter name and offset of a flat scalar index.
    pub fn describe_flat(&self, flat: usize) -> (String, usize) {
        let (i, off) = self.locate(flat);
        (self.params[i].name.clone(), off)
    }

    pub fn get_flat(&self, flat: usize) -> f64 {
        let (i, off) = self.locate(flat);
        self.params[i].value.as_slice().expect("standard layout")[off]
    }

    pub fn set_flat(&mut self, flat: usize, v: f64) {
        let (i, off) = self.locate(flat);
        Arc::make_mut(&mut self.params[i].value).as_slice_mut().expect("standard layout")[off] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Per-forward-pass context: the tape, the parameters, the train/eval flag
/// and the randomness used by dropout and sampling layers.
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    store: &'t ParamStore,
    leaves: RefCell<Vec<Option<usize>>>,
    train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParamStore, train: bool, seed: u64) -> Self {
        Ctx {
            tape,
            store,
            leaves: RefCell::new(vec![None; store.len()]),
            train,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'t ParamStore {
        self.store
    }

    /// The tape leaf for a parameter, created on first use.
    pub fn param(&self, id: ParamId) -> Tensor<'t> {
        if let Some(node) = self.leaves.borrow()[id.0] {
            return Tensor { tape: self.tape, id: node };
        }
        let t = self.tape.leaf_shared(self.store.params[id.0].value.clone(), true);
        self.leaves.borrow_mut()[id.0] = Some(t.id);
        t
    }

    pub fn constant(&self, value: Arr) -> Tensor<'t> {
        self.tape.constant(value)
    }

    pub fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&self, x: Tensor<'t>, p: f64) -> Tensor<'t> {
        if !self.train || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let shape = x.shape();
        let mask = self.with_rng(|rng| {
            ArrayD::from_shape_simple_fn(IxDyn(&shape), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        });
        x.mul(self.tape.constant(mask))
    }

    /// Gradients for every parameter used in this pass, by parameter index.
    pub fn param_grads(&self, grads: &mut Grads) -> Vec<Option<Arr>> {
        self.leaves.borrow().iter().map(|leaf| leaf.and_then(|id| grads.take_id(id))).collect()
    }
}
