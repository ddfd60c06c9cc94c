//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `SHEDCKPT`, u32 version, u64 episode,
//! u32 record count, then per record: u16 name length, name bytes, u8
//! activation code (0 when not a network), u32 rank, u32 dims, u64 value
//! count, f64 values.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::env::Family;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::rng::seeded;
use crate::student::StudentPolicy;
use crate::teacher::TeacherAgent;

pub const MAGIC: &[u8; 8] = b"SHEDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub activation: u8,
    pub shape: Vec<u32>,
    pub values: Vec<f64>,
}

impl Record {
    pub fn from_mlp(name: &str, mlp: &Mlp) -> Self {
        Self {
            name: name.to_string(),
            activation: mlp.hidden().code(),
            shape: mlp.sizes().iter().map(|&s| s as u32).collect(),
            values: mlp.params().to_vec(),
        }
    }

    pub fn vector(name: &str, values: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            activation: 0,
            shape: vec![values.len() as u32],
            values: values.to_vec(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let act = Activation::from_code(self.activation)
            .ok_or_else(|| Error::Checkpoint(format!("{}: unknown activation {}", self.name, self.activation)))?;
        let sizes = self.shape.iter().map(|&s| s as usize).collect();
        Mlp::from_parts(sizes, act, self.values.clone())
            .ok_or_else(|| Error::Checkpoint(format!("{}: parameter count does not match shape", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub episode: u64,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn new(episode: u64) -> Self {
        Self {
            episode,
            records: Vec::new(),
        }
    }

    pub fn with_student(mut self, student: &StudentPolicy) -> Self {
        self.records.push(Record::from_mlp("student.policy", &student.policy));
        self.records.push(Record::vector("student.log_std", &student.log_std));
        self.records.push(Record::from_mlp("student.value", &student.value));
        self
    }

    pub fn with_teacher(mut self, agent: &TeacherAgent) -> Self {
        self.records.push(Record::from_mlp("teacher.actor", &agent.actor));
        self.records.push(Record::from_mlp("teacher.critic", &agent.critic));
        self
    }

    pub fn record(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
    }

    /// Rebuilds the student stored in this checkpoint.
    pub fn student(&self, family: Family, gamma: f64, gae_lambda: f64) -> Result<StudentPolicy> {
        let policy = self.record("student.policy")?.to_mlp()?;
        let value = self.record("student.value")?.to_mlp()?;
        let log_std = &self.record("student.log_std")?.values;
        let sizes = policy.sizes();
        if sizes.len() != 4 || sizes[0] != family.obs_dim() {
            return Err(Error::Checkpoint(format!(
                "student network {sizes:?} does not fit the {} family",
                family.name()
            )));
        }
        let mut s = StudentPolicy::for_family(family, [sizes[1], sizes[2]], gamma, gae_lambda, &mut seeded(0));
        if s.policy.sizes() != policy.sizes() || s.value.sizes() != value.sizes() || s.log_std.len() != log_std.len() {
            return Err(Error::Checkpoint("student record shapes are inconsistent".into()));
        }
        s.policy = policy;
        s.value = value;
        s.log_std = log_std.clone();
        Ok(s)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.episode)?;
        w.write_u32::<LittleEndian>(self.records.len() as u32)?;
        for r in &self.records {
            let name = r.name.as_bytes();
            w.write_u16::<LittleEndian>(name.len() as u16)?;
            w.write_all(name)?;
            w.write_u8(r.activation)?;
            w.write_u32::<LittleEndian>(r.shape.len() as u32)?;
            for &d in &r.shape {
                w.write_u32::<LittleEndian>(d)?;
            }
            w.write_u64::<LittleEndian>(r.values.len() as u64)?;
            for &v in &r.values {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(bad)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let episode = r.read_u64::<LittleEndian>().map_err(bad)?;
        let n = r.read_u32::<LittleEndian>().map_err(bad)?;
        let mut records = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let len = r.read_u16::<LittleEndian>().map_err(bad)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(bad)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("record name is not utf-8".into()))?;
            let activation = r.read_u8().map_err(bad)?;
            let rank = r.read_u32::<LittleEndian>().map_err(bad)?;
            let shape = (0..rank)
                .map(|_| r.read_u32::<LittleEndian>())
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(bad)?;
            let count = r.read_u64::<LittleEndian>().map_err(bad)?;
            let mut values = Vec::new();
            for _ in 0..count {
                values.push(r.read_f64::<LittleEndian>().map_err(bad)?);
            }
            records.push(Record {
                name,
                activation,
                shape,
                values,
            });
        }
        Ok(Self { episode, records })
    }

    /// Writes the checkpoint and returns the hex SHA-256 of its bytes.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
