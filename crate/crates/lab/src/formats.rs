//! Little-endian binary files for networks, datasets, self-models and agents.
//!
//! All real payloads are stored as `f32`; in memory everything is `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use selfmodel_core::nn::{Activation, DenseNet, Layer};
use selfmodel_core::ppo::{PolicyValuePair, LOG_STD_FLOOR};
use selfmodel_core::self_model::{
    ChannelStats, NormStats, SelfModel, TrainingReport, Transition, TransitionDataset, STD_FLOOR,
};

pub const NET_MAGIC: [u8; 4] = *b"SDNN";
pub const DATASET_MAGIC: [u8; 4] = *b"SMDS";
pub const MODEL_MAGIC: [u8; 4] = *b"SMFM";
pub const AGENT_MAGIC: [u8; 4] = *b"SMPG";
pub const FORMAT_VERSION: u32 = 1;

// Guards against absurd allocations from corrupt headers.
const MAX_DIM: u32 = 1 << 20;
const MAX_LAYERS: u32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("corrupt header: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Invalid(#[from] selfmodel_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, FormatError>;

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f32s(&mut self, values: &[f64]) {
        for v in values {
            self.bytes(&(*v as f32).to_le_bytes());
        }
    }

    fn dim(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension exceeds u32"));
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            }),
        }
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(&expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::UnsupportedVersion(v)),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u32()?;
        if v == 0 || v > MAX_DIM {
            return Err(FormatError::Corrupt(format!("{what} = {v}")));
        }
        Ok(v as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            FormatError::Corrupt("payload length overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn put_net(w: &mut ByteWriter, net: &DenseNet) {
    w.bytes(&NET_MAGIC);
    w.u32(FORMAT_VERSION);
    let layers = net.layers();
    w.dim(layers.len());
    for size in net.layer_sizes() {
        w.dim(size);
    }
    for layer in layers {
        w.u8(layer.activation().code());
    }
    for layer in layers {
        w.f32s(layer.weights());
        w.f32s(layer.biases());
    }
}

fn get_net(r: &mut ByteReader) -> Result<DenseNet> {
    r.magic(NET_MAGIC)?;
    r.version()?;
    let count = r.u32()?;
    if count == 0 || count > MAX_LAYERS {
        return Err(FormatError::Corrupt(format!("layer count = {count}")));
    }
    let sizes = (0..=count)
        .map(|_| r.dim("layer size"))
        .collect::<Result<Vec<_>>>()?;
    let activations = (0..count)
        .map(|_| {
            let code = r.u8()?;
            Activation::from_code(code)
                .ok_or_else(|| FormatError::Corrupt(format!("activation code {code}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(count as usize);
    for (k, act) in activations.into_iter().enumerate() {
        let (inputs, outputs) = (sizes[k], sizes[k + 1]);
        let weights = r.f32s(inputs * outputs)?;
        let biases = r.f32s(outputs)?;
        layers.push(Layer::new(inputs, outputs, act, weights, biases)?);
    }
    Ok(DenseNet::from_layers(layers)?)
}

fn put_stats(w: &mut ByteWriter, stats: &NormStats) {
    for c in [&stats.observation, &stats.action, &stats.delta] {
        w.f32s(&c.mean);
        w.f32s(&c.std);
    }
}

// Stds are floored again on load: the floor itself is not exactly
// representable in f32.
fn get_stats(r: &mut ByteReader, obs_dim: usize, act_dim: usize) -> Result<NormStats> {
    let mut channel = |dim: usize| -> Result<ChannelStats> {
        let mean = r.f32s(dim)?;
        let std = r.f32s(dim)?.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(ChannelStats { mean, std })
    };
    Ok(NormStats {
        observation: channel(obs_dim)?,
        action: channel(act_dim)?,
        delta: channel(obs_dim)?,
    })
}

pub fn encode_net(net: &DenseNet) -> Vec<u8> {
    let mut w = ByteWriter::new();
    put_net(&mut w, net);
    w.0
}

pub fn decode_net(bytes: &[u8]) -> Result<DenseNet> {
    let mut r = ByteReader::new(bytes);
    let net = get_net(&mut r)?;
    r.finish()?;
    Ok(net)
}

pub fn encode_dataset(data: &TransitionDataset) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&DATASET_MAGIC);
    w.u32(FORMAT_VERSION);
    w.dim(data.obs_dim());
    w.dim(data.act_dim());
    w.u64(data.len() as u64);
    for t in data.transitions() {
        w.f32s(&t.state);
        w.f32s(&t.action);
        w.f32s(&t.next_state);
    }
    put_stats(&mut w, data.norm_stats());
    w.0
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TransitionDataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version()?;
    let obs_dim = r.dim("obs_dim")?;
    let act_dim = r.dim("act_dim")?;
    let count = r.u64()?;
    let row = (2 * obs_dim + act_dim) as u64 * 4;
    let remaining = (bytes.len() - r.pos) as u64;
    if count.checked_mul(row).map_or(true, |n| n > remaining) {
        return Err(FormatError::Corrupt(format!(
            "count {count} does not fit in {remaining} bytes"
        )));
    }
    let mut transitions = Vec::with_capacity(count as usize);
    for _ in 0..count {
        transitions.push(Transition {
            state: r.f32s(obs_dim)?,
            action: r.f32s(act_dim)?,
            next_state: r.f32s(obs_dim)?,
        });
    }
    let stats = get_stats(&mut r, obs_dim, act_dim)?;
    r.finish()?;
    Ok(TransitionDataset::from_parts(
        obs_dim,
        act_dim,
        transitions,
        stats,
    )?)
}

/// The training report is not stored; a decoded model carries NaN losses.
pub fn encode_self_model(model: &SelfModel) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.dim(model.obs_dim());
    w.dim(model.act_dim());
    put_stats(&mut w, model.norm_stats());
    put_net(&mut w, model.net());
    w.0
}

pub fn decode_self_model(bytes: &[u8]) -> Result<SelfModel> {
    let mut r = ByteReader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    r.version()?;
    let obs_dim = r.dim("obs_dim")?;
    let act_dim = r.dim("act_dim")?;
    let stats = get_stats(&mut r, obs_dim, act_dim)?;
    let net = get_net(&mut r)?;
    r.finish()?;
    let report = TrainingReport {
        train_loss: f64::NAN,
        validation_loss: f64::NAN,
        epochs_run: 0,
        best_epoch: 0,
    };
    Ok(SelfModel::from_parts(obs_dim, act_dim, net, stats, report)?)
}

pub fn encode_agent(agent: &PolicyValuePair) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&AGENT_MAGIC);
    w.u32(FORMAT_VERSION);
    put_net(&mut w, agent.policy());
    put_net(&mut w, agent.value_net());
    w.dim(agent.log_std().len());
    w.f32s(agent.log_std());
    w.0
}

pub fn decode_agent(bytes: &[u8]) -> Result<PolicyValuePair> {
    let mut r = ByteReader::new(bytes);
    r.magic(AGENT_MAGIC)?;
    r.version()?;
    let policy = get_net(&mut r)?;
    let value = get_net(&mut r)?;
    let n = r.dim("log_std length")?;
    let log_std: Vec<f64> = r.f32s(n)?.into_iter().map(|v| v.max(LOG_STD_FLOOR)).collect();
    r.finish()?;
    Ok(PolicyValuePair::from_parts(policy, log_std, value)?)
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::other(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use selfmodel_core::env::preset;
    use selfmodel_core::self_model::collect_random;

    fn f32_net(sizes: &[usize], seed: u64) -> DenseNet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(sizes, Activation::Tanh, &mut rng).unwrap();
        decode_net(&encode_net(&net)).unwrap()
    }

    #[test]
    fn net_layout_matches_hand_encoding() {
        let layer = Layer::new(2, 1, Activation::Identity, vec![1.5, -2.0], vec![0.25]).unwrap();
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        let mut expected = b"SDNN".to_vec();
        for v in [1u32, 1, 2, 1] {
            expected.extend(v.to_le_bytes());
        }
        expected.push(Activation::Identity.code());
        for v in [1.5f32, -2.0, 0.25] {
            expected.extend(v.to_le_bytes());
        }
        assert_eq!(encode_net(&net), expected);
    }

    #[test]
    fn dataset_round_trip_is_stable() {
        let data = collect_random(&preset("crawler-4").unwrap(), 50, 20, 3).unwrap();
        let bytes = encode_dataset(&data);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.len(), 50);
        assert_eq!(back.act_dim(), 4);
        assert_eq!(encode_dataset(&back), bytes);
    }

    #[test]
    fn truncation_and_corruption_are_rejected() {
        let bytes = encode_net(&f32_net(&[3, 4, 2], 1));
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(decode_net(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_net(&extra), Err(FormatError::TrailingBytes(1))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_net(&magic), Err(FormatError::BadMagic { .. })));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(decode_net(&version), Err(FormatError::UnsupportedVersion(9))));
        assert!(decode_agent(&bytes).is_err());
    }

    #[test]
    fn agent_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let agent = PolicyValuePair::new(10, 2, &mut rng).unwrap();
        let once = decode_agent(&encode_agent(&agent)).unwrap();
        let twice = decode_agent(&encode_agent(&once)).unwrap();
        assert_eq!(once, twice);
        assert_eq!(encode_agent(&once), encode_agent(&twice));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn net_round_trip_is_bit_exact(
            sizes in prop::collection::vec(1usize..12, 2..5),
            seed in any::<u64>(),
        ) {
            let net = f32_net(&sizes, seed);
            let bytes = encode_net(&net);
            let back = decode_net(&bytes).unwrap();
            prop_assert_eq!(&back, &net);
            prop_assert_eq!(encode_net(&back), bytes);
        }
    }
}
