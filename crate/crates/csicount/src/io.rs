//! File formats: CSI CSV interchange, event sidecars, and binary model
//! checkpoints with a whole-file checksum. All writes are atomic
//! (temp file + rename).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dsp::CsiSeries;
use crate::model::{ClassificationHead, CsiEncoder, EncoderConfig};
use crate::scalar::Scalar;
use crate::{Error, EventLabel, Result};

/// Write `bytes` to `path` atomically via a temp file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Serialize a series as `timestamp,sc_0,...,sc_{C-1}` rows. Full f64
/// precision: Rust's float Display is shortest-round-trip.
pub fn csi_csv_string(series: &CsiSeries) -> String {
    let c = series.num_subcarriers();
    let mut out = String::from("timestamp");
    for i in 0..c {
        out.push_str(&format!(",sc_{i}"));
    }
    out.push('\n');
    for (ts, row) in series.timestamps.iter().zip(&series.amplitudes) {
        out.push_str(&format!("{ts}"));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_csi_csv(series: &CsiSeries, path: &Path) -> Result<()> {
    series.validate()?;
    atomic_write(path, csi_csv_string(series).as_bytes())
}

/// Parse a CSI CSV file. `expected_cols` enforces the subcarrier count
/// (None accepts whatever the header declares, for other datasets).
pub fn read_csi_csv(
    path: &Path,
    expected_cols: Option<usize>,
    sample_rate_hz: f64,
) -> Result<CsiSeries> {
    let text = fs::read_to_string(path)?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    parse_csi_csv(&text, &source_id, expected_cols, sample_rate_hz)
}

pub fn parse_csi_csv(
    text: &str,
    source_id: &str,
    expected_cols: Option<usize>,
    sample_rate_hz: f64,
) -> Result<CsiSeries> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"timestamp") || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad header '{header}', expected 'timestamp,sc_0,...'"),
        });
    }
    let c = cols.len() - 1;
    for (i, name) in cols[1..].iter().enumerate() {
        if *name != format!("sc_{i}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("column {} named '{name}', expected 'sc_{i}'", i + 1),
            });
        }
    }
    if let Some(want) = expected_cols {
        if c != want {
            return Err(Error::Parse {
                line: 1,
                msg: format!("{c} subcarrier columns, expected {want}"),
            });
        }
    }
    let mut timestamps = Vec::new();
    let mut amplitudes = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != c + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("{} fields, expected {}", fields.len(), c + 1),
            });
        }
        let ts: f64 = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad timestamp '{}'", fields[0]),
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("timestamp {ts} not greater than previous {prev}"),
                });
            }
        }
        let mut row = Vec::with_capacity(c);
        for f in &fields[1..] {
            row.push(f.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad value '{f}'"),
            })?);
        }
        timestamps.push(ts);
        amplitudes.push(row);
    }
    Ok(CsiSeries {
        source_id: source_id.to_string(),
        sample_rate_hz,
        timestamps,
        amplitudes,
        event_marks: Vec::new(),
    })
}

/// Serialize event marks as `timestamp,label` rows.
pub fn events_csv_string(marks: &[(f64, EventLabel)]) -> String {
    let mut out = String::from("timestamp,label\n");
    for (ts, l) in marks {
        out.push_str(&format!("{ts},{}\n", l.name()));
    }
    out
}

pub fn write_events_csv(marks: &[(f64, EventLabel)], path: &Path) -> Result<()> {
    atomic_write(path, events_csv_string(marks).as_bytes())
}

pub fn parse_events_csv(text: &str) -> Result<Vec<(f64, EventLabel)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == "timestamp,label" => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad header '{h}', expected 'timestamp,label'"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty events file".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (ts, label) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected 'timestamp,label'".into(),
        })?;
        let ts: f64 = ts.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad timestamp '{ts}'"),
        })?;
        let label = EventLabel::parse(label).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        out.push((ts, label));
    }
    Ok(out)
}

pub fn read_events_csv(path: &Path) -> Result<Vec<(f64, EventLabel)>> {
    parse_events_csv(&fs::read_to_string(path)?)
}

const CKPT_MAGIC: &[u8; 8] = b"CSICKPT\0";
const CKPT_VERSION: u32 = 1;

/// Where a checkpoint came from, for run bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: usize,
    pub dataset_hash: String,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// An in-memory model snapshot: every named parameter and buffer, plus the
/// config needed to rebuild the module structure.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder_config: EncoderConfig,
    pub num_classes: Option<usize>,
    pub provenance: Provenance,
    pub blobs: Vec<NamedBlob>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointMeta {
    encoder_config: EncoderConfig,
    num_classes: Option<usize>,
    provenance: Provenance,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        encoder: &CsiEncoder<T>,
        head: Option<&ClassificationHead<T>>,
        provenance: Provenance,
    ) -> Self {
        let mut blobs = Vec::new();
        encoder.visit(&mut |path, t, _kind| {
            blobs.push(NamedBlob {
                name: path.to_string(),
                shape: t.shape(),
                data: t.data().iter().map(|&v| Scalar::to_f64(v)).collect(),
            });
        });
        if let Some(h) = head {
            for (name, t) in h.named_params() {
                blobs.push(NamedBlob {
                    name,
                    shape: t.shape(),
                    data: t.data().iter().map(|&v| Scalar::to_f64(v)).collect(),
                });
            }
        }
        Checkpoint {
            version: CKPT_VERSION,
            encoder_config: encoder.config.clone(),
            num_classes: head.map(|h| h.num_classes),
            provenance,
            blobs,
        }
    }

    pub fn blob(&self, name: &str) -> Option<&NamedBlob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    /// Copy stored values into an existing model. Every model tensor must
    /// have a matching blob.
    pub fn apply_to<T: Scalar>(
        &self,
        encoder: &CsiEncoder<T>,
        head: Option<&ClassificationHead<T>>,
    ) -> Result<()> {
        let mut targets: Vec<(String, crate::ndtensor::Tensor<T>)> = Vec::new();
        encoder.visit(&mut |path, t, _| targets.push((path.to_string(), t.clone())));
        if let Some(h) = head {
            targets.extend(h.named_params());
        }
        for (name, t) in targets {
            let blob = self.blob(&name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter blob '{name}'"))
            })?;
            if blob.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "blob '{name}' shape {:?} != model shape {:?}",
                    blob.shape,
                    t.shape()
                )));
            }
            t.set_data(blob.data.iter().map(|&v| T::from_f64(v)).collect())?;
        }
        Ok(())
    }

    /// Rebuild encoder (+ head if stored) from the checkpoint alone.
    pub fn build_model<T: Scalar>(&self) -> Result<(CsiEncoder<T>, Option<ClassificationHead<T>>)> {
        let encoder = CsiEncoder::new(&self.encoder_config, 0)?;
        let head = match self.num_classes {
            Some(k) => Some(ClassificationHead::new(self.encoder_config.embedding_dim, k, 0)),
            None => None,
        };
        self.apply_to(&encoder, head.as_ref())?;
        Ok((encoder, head))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let meta = serde_json::to_vec(&CheckpointMeta {
            encoder_config: self.encoder_config.clone(),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        })
        .expect("meta serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.blobs.len() as u64).to_le_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&(b.name.len() as u64).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u64).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(b.data.len() as u64).to_le_bytes());
            for &v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < CKPT_MAGIC.len() + 4 + 32 {
            return Err(err("file truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(err("checksum mismatch: file corrupted"));
        }
        let mut r = Cursor { buf: body, pos: 0 };
        if r.take(8)? != CKPT_MAGIC {
            return Err(err("bad magic bytes"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CKPT_VERSION}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let n_blobs = r.u64()? as usize;
        let mut blobs = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| err("blob name not utf-8"))?;
            let ndim = r.u64()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = r.u64()? as usize;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            blobs.push(NamedBlob { name, shape, data });
        }
        Ok(Checkpoint {
            version,
            encoder_config: meta.encoder_config,
            num_classes: meta.num_classes,
            provenance: meta.provenance,
            blobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Hash of a window set, recorded in checkpoint provenance.
pub fn dataset_hash(windows: &[crate::dsp::Window]) -> String {
    let mut h = Sha256::new();
    for w in windows {
        for row in &w.values {
            for v in row {
                h.update(v.to_le_bytes());
            }
        }
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, TensorKind};
    use crate::ndtensor::{Graph, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_series() -> CsiSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        CsiSeries {
            source_id: "sample".into(),
            sample_rate_hz: 100.0,
            timestamps: (0..5).map(|i| i as f64 * 0.01).collect(),
            amplitudes: (0..5)
                .map(|_| (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect())
                .collect(),
            event_marks: vec![],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = sample_series();
        let text = csi_csv_string(&s);
        let back = parse_csi_csv(&text, "sample", Some(4), 100.0).unwrap();
        assert_eq!(back.timestamps, s.timestamps);
        assert_eq!(back.amplitudes, s.amplitudes);
    }

    #[test]
    fn csv_parse_errors_carry_line_numbers() {
        let dup = "timestamp,sc_0\n1.0,2.0\n1.0,3.0\n";
        match parse_csi_csv(dup, "x", None, 100.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_val = "timestamp,sc_0\n1.0,abc\n";
        match parse_csi_csv(bad_val, "x", None, 100.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let wrong_cols = "timestamp,sc_0\n1.0,2.0,3.0\n";
        assert!(parse_csi_csv(wrong_cols, "x", None, 100.0).is_err());
        assert!(parse_csi_csv("timestamp,sc_0\n1.0,2.0\n", "x", Some(52), 100.0).is_err());
    }

    #[test]
    fn events_round_trip() {
        let marks = vec![(5.25, EventLabel::Enter), (9.0, EventLabel::Exit)];
        let text = events_csv_string(&marks);
        assert_eq!(parse_events_csv(&text).unwrap(), marks);
        assert!(parse_events_csv("nonsense\n").is_err());
    }

    #[test]
    fn file_round_trip_via_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let s = sample_series();
        write_csi_csv(&s, &path).unwrap();
        let back = read_csi_csv(&path, Some(4), 100.0).unwrap();
        assert_eq!(back.amplitudes, s.amplitudes);
        assert_eq!(back.source_id, "series");
    }

    fn small_model() -> (CsiEncoder<f32>, ClassificationHead<f32>) {
        let cfg = EncoderConfig {
            in_channels: 3,
            window_len: 20,
            layer_channels: vec![4, 8],
            blocks_per_layer: 1,
            se_reduction: 2,
            adapter_bottleneck: 2,
            embedding_dim: 6,
            se_enabled: true,
            adapters_enabled: true,
        };
        let enc = CsiEncoder::new(&cfg, 11).unwrap();
        let head = ClassificationHead::new(6, 3, 12);
        (enc, head)
    }

    #[test]
    fn checkpoint_round_trip_forward_is_bit_exact() {
        let (enc, head) = small_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_vec(
            &[2, 3, 20],
            (0..120).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let g = Graph::inference();
        let e_ref = enc.forward(&g, &x, Mode::Eval).unwrap();
        let logits_ref = head.forward(&g, &e_ref).unwrap().data_clone();

        let ckpt = Checkpoint::from_model(&enc, Some(&head), Provenance::default());
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        let (enc2, head2) = loaded.build_model::<f32>().unwrap();
        let e2 = enc2.forward(&g, &x, Mode::Eval).unwrap();
        let logits2 = head2.unwrap().forward(&g, &e2).unwrap().data_clone();
        assert_eq!(logits_ref, logits2);
    }

    #[test]
    fn checkpoint_disk_round_trip() {
        let (enc, head) = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint::from_model(&enc, Some(&head), Provenance::default());
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.blobs, ckpt.blobs);
        assert_eq!(loaded.num_classes, Some(3));
    }

    #[test]
    fn corruption_of_any_single_byte_is_detected() {
        let (enc, head) = small_model();
        let ckpt = Checkpoint::from_model(&enc, Some(&head), Provenance::default());
        let bytes = ckpt.to_bytes();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut bad = bytes.clone();
            let i = rng.gen_range(0..bad.len());
            bad[i] ^= 0x40;
            assert!(
                Checkpoint::from_bytes(&bad).is_err(),
                "corruption at byte {i} not detected"
            );
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let (enc, head) = small_model();
        let ckpt = Checkpoint::from_model(&enc, Some(&head), Provenance::default());
        let mut bytes = ckpt.to_bytes();
        // rewrite the version field, then re-seal the checksum
        bytes[8] = 99;
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn blob_names_include_running_stats() {
        let (enc, _) = small_model();
        let ckpt = Checkpoint::from_model(&enc, None, Provenance::default());
        assert!(ckpt.blob("bn1.running_mean").is_some());
        assert!(ckpt.blob("layer1.block1.bn2.running_var").is_some());
        assert!(ckpt.blob("head.fc.weight").is_none());
    }

    #[test]
    fn apply_rejects_mismatched_model() {
        let (enc, head) = small_model();
        let ckpt = Checkpoint::from_model(&enc, None, Provenance::default());
        assert!(ckpt.apply_to(&enc, Some(&head)).is_err());
    }

    #[test]
    fn buffers_and_params_both_restored() {
        let (enc, _) = small_model();
        enc.bn1.running_mean.set_data(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ckpt = Checkpoint::from_model(&enc, None, Provenance::default());
        let (enc2, _) = ckpt.build_model::<f32>().unwrap();
        assert_eq!(enc2.bn1.running_mean.data_clone(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn tensor_kind_partition_matches_expectation() {
        let (enc, _) = small_model();
        let mut params = 0;
        let mut buffers = 0;
        enc.visit(&mut |_, _, kind| match kind {
            TensorKind::Param => params += 1,
            TensorKind::Buffer => buffers += 1,
        });
        assert!(params > 0 && buffers > 0);
        assert_eq!(enc.named_params().len(), params);
        assert_eq!(enc.named_buffers().len(), buffers);
    }
}
