use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Matrix;
use crate::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Glorot uniform over `(fan_in, fan_out) = (rows, cols)`.
    XavierUniform,
    Uniform(f64),
}

const MAGIC: &[u8; 4] = b"SPXW";
const FORMAT_VERSION: u32 = 1;

/// Named, seeded parameter storage. Values are reference counted so a graph
/// can bind them without copying; the optimizer updates them in place once
/// the graph is dropped.
#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Matrix>>,
    index: HashMap<String, ParamId>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Return the parameter called `name`, creating it with `init` if absent.
    pub fn get_or_init(&mut self, name: &str, shape: (usize, usize), init: Init) -> ParamId {
        if let Some(id) = self.index.get(name) {
            assert_eq!(
                self.values[id.0].dim(),
                shape,
                "parameter {name} re-requested with a different shape"
            );
            return *id;
        }
        let value = match init {
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
            Init::Constant(c) => Array2::from_elem(shape, c),
            Init::XavierUniform => {
                let bound = (6.0 / (shape.0 + shape.1) as f64).sqrt();
                Array2::from_shape_simple_fn(shape, || self.rng.gen_range(-bound..bound))
            }
            Init::Uniform(bound) => Array2::from_shape_simple_fn(shape, || self.rng.gen_range(-bound..bound)),
        };
        self.insert(name, value)
    }

    pub fn insert(&mut self, name: &str, value: Matrix) -> ParamId {
        if let Some(id) = self.index.get(name) {
            self.values[id.0] = Arc::new(value);
            return *id;
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(Arc::new(value));
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Matrix> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) {
        assert_eq!(self.values[id.0].dim(), value.dim());
        self.values[id.0] = Arc::new(value);
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Serialise all parameters in registration order.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(value.nrows() as u64).to_le_bytes())?;
            w.write_all(&(value.ncols() as u64).to_le_bytes())?;
            for x in value.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Overwrite parameters with values read from `r`. Every stored name must
    /// already be registered with the same shape.
    pub fn load<R: Read>(&mut self, mut r: R) -> Result<(), NnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad weights magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!(
                "weights format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| NnError::Format("parameter name is not utf-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let value = Array2::from_shape_vec((rows, cols), data).map_err(|e| NnError::Format(e.to_string()))?;
            let id = self
                .id(&name)
                .ok_or_else(|| NnError::Format(format!("unknown parameter {name}")))?;
            if self.values[id.0].dim() != value.dim() {
                return Err(NnError::Format(format!(
                    "parameter {name}: stored shape {:?}, model shape {:?}",
                    value.dim(),
                    self.values[id.0].dim()
                )));
            }
            self.values[id.0] = Arc::new(value);
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
