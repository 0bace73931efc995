use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to one named parameter array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    offset: usize,
    len: usize,
}

impl ParamId {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub id: ParamId,
}

/// Initialization scheme for a freshly allocated parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Xavier/Glorot uniform with the given fan-in and fan-out.
    XavierUniform { fan_in: usize, fan_out: usize },
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

/// Flat storage for every trainable value of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate a parameter. Names must be unique.
    pub fn alloc(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter name {name}"
        );
        let len: usize = shape.iter().product();
        let id = ParamId {
            offset: self.data.len(),
            len,
        };
        match init {
            Init::Zeros => self.data.resize(self.data.len() + len, 0.0),
            Init::Ones => self.data.resize(self.data.len() + len, 1.0),
            Init::XavierUniform { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                self.data
                    .extend((0..len).map(|_| rng.gen_range(-bound..=bound)));
            }
            Init::Uniform(bound) => self
                .data
                .extend((0..len).map(|_| rng.gen_range(-bound..=bound))),
        }
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            id,
        });
        id
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.range()]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.range()]
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: vec![0.0; self.data.len()],
        }
    }
}

/// Gradient buffer with the same flat layout as its [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<f64>,
}

impl Grads {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.range()]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.range()]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn allocation_is_contiguous_and_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let a = store.alloc("a", &[2, 3], Init::Zeros, &mut rng);
        let b = store.alloc("b", &[4], Init::Ones, &mut rng);
        assert_eq!(store.len(), 10);
        assert_eq!(a.range(), 0..6);
        assert_eq!(b.range(), 6..10);
        assert_eq!(store.get(b), &[1.0; 4]);
        assert_eq!(store.spec("a").unwrap().shape, vec![2, 3]);
    }

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w = store.alloc(
            "w",
            &[16, 8],
            Init::XavierUniform { fan_in: 8, fan_out: 16 },
            &mut rng,
        );
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(store.get(w).iter().all(|v| v.abs() <= bound));
        assert!(store.get(w).iter().any(|v| *v != 0.0));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.alloc("x", &[1], Init::Zeros, &mut rng);
        store.alloc("x", &[1], Init::Zeros, &mut rng);
    }
}
