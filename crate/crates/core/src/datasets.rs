//! Sample manifests, the EMB1 embedding file format, and a synthetic
//! two-view dataset generator.
//!
//! A manifest is JSON-lines, one record per training pair. A record's
//! `positives` and `semi_positives` name other records by id; the reference
//! half of the named pair is the positive (or semi-positive) for this
//! record's query half.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{geo_topk, GeoConfig};

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
const EMB1_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Crs {
    Wgs84,
    Planar,
}

/// A location. For `Wgs84`, `a` is latitude and `b` longitude in degrees;
/// for `Planar`, `a`/`b` are easting/northing in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub a: f64,
    pub b: f64,
    pub crs: Crs,
}

impl Coordinate {
    pub fn wgs84(lat: f64, lon: f64) -> Result<Self> {
        let c = Coordinate {
            a: lat,
            b: lon,
            crs: Crs::Wgs84,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn planar(x: f64, y: f64) -> Self {
        Coordinate {
            a: x,
            b: y,
            crs: Crs::Planar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::NonFinite("coordinate"));
        }
        if self.crs == Crs::Wgs84
            && (!(-90.0..=90.0).contains(&self.a) || !(-180.0..=180.0).contains(&self.b))
        {
            return Err(Error::CoordinateRange(format!(
                "lat {} lon {} outside [-90,90]x[-180,180]",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub pair_index: usize,
    pub class_id: String,
    pub coord: Coordinate,
    pub positives: Vec<String>,
    pub semi_positives: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    class_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    crs: Crs,
    positives: Vec<String>,
    #[serde(default)]
    semi_positives: Vec<String>,
}

impl ManifestLine {
    fn from_record(r: &SampleRecord) -> Self {
        let (lat, lon, x, y) = match r.coord.crs {
            Crs::Wgs84 => (Some(r.coord.a), Some(r.coord.b), None, None),
            Crs::Planar => (None, None, Some(r.coord.a), Some(r.coord.b)),
        };
        ManifestLine {
            id: r.id.clone(),
            class_id: r.class_id.clone(),
            lat,
            lon,
            x,
            y,
            crs: r.coord.crs,
            positives: r.positives.clone(),
            semi_positives: r.semi_positives.clone(),
        }
    }

    fn into_record(self, pair_index: usize) -> std::result::Result<SampleRecord, String> {
        let coord = match self.crs {
            Crs::Wgs84 => {
                let lat = self.lat.ok_or("wgs84 record without `lat`")?;
                let lon = self.lon.ok_or("wgs84 record without `lon`")?;
                Coordinate::wgs84(lat, lon).map_err(|e| e.to_string())?
            }
            Crs::Planar => {
                let x = self.x.ok_or("planar record without `x`")?;
                let y = self.y.ok_or("planar record without `y`")?;
                let c = Coordinate::planar(x, y);
                c.validate().map_err(|e| e.to_string())?;
                c
            }
        };
        if self.positives.is_empty() {
            return Err(format!("record `{}` has no positives", self.id));
        }
        if let Some(s) = self
            .semi_positives
            .iter()
            .find(|s| self.positives.contains(s))
        {
            return Err(format!(
                "record `{}` lists `{s}` as both positive and semi-positive",
                self.id
            ));
        }
        Ok(SampleRecord {
            id: self.id,
            pair_index,
            class_id: self.class_id,
            coord,
            positives: self.positives,
            semi_positives: self.semi_positives,
        })
    }
}

/// Checks cross-record invariants: unique ids and resolvable links.
pub fn validate_manifest(records: &[SampleRecord]) -> Result<()> {
    let mut ids = HashSet::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.pair_index != i {
            return Err(Error::Invalid(format!(
                "record `{}` has pair_index {} at position {i}",
                r.id, r.pair_index
            )));
        }
        if !ids.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    for r in records {
        for target in r.positives.iter().chain(&r.semi_positives) {
            if !ids.contains(target.as_str()) {
                return Err(Error::UnknownReference {
                    record: r.id.clone(),
                    target: target.clone(),
                });
            }
        }
    }
    Ok(())
}

pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = parsed
            .into_record(records.len())
            .map_err(|message| Error::Manifest {
                line: line_no,
                message,
            })?;
        records.push(record);
    }
    validate_manifest(&records)?;
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(file))
}

/// The manifest as JSON lines, exactly as [`write_manifest`] writes it.
pub fn manifest_jsonl(records: &[SampleRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(&ManifestLine::from_record(r)).expect("manifest line serialises") + "\n")
        .collect()
}

pub fn write_manifest(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_jsonl(records)).map_err(|e| Error::io(path, e))
}

/// Dense row-major `count x dim` matrix of 32-bit embeddings with one
/// sample id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    count: usize,
    dim: usize,
    data: Vec<f32>,
    row_ids: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, data: Vec<f32>, row_ids: Vec<String>) -> Result<Self> {
        let count = row_ids.len();
        if data.len() != count * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {count} rows of dim {dim}",
                data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(count);
        for id in &row_ids {
            if id.contains('\n') {
                return Err(Error::Invalid(format!("row id {id:?} contains a newline")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingTable {
            count,
            dim,
            data,
            row_ids,
        })
    }

    /// Builds a table from 64-bit rows, rounding to f32.
    pub fn from_rows(rows: ArrayView2<'_, f64>, row_ids: Vec<String>) -> Result<Self> {
        let data = rows.iter().map(|&v| v as f32).collect();
        Self::new(rows.ncols(), data, row_ids)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_f64(&self) -> Array2<f64> {
        Array2::from_shape_vec(
            (self.count, self.dim),
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("shape checked at construction")
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.count {
                return Err(Error::Invalid(format!(
                    "row {r} out of range for {} rows",
                    self.count
                )));
            }
            data.extend_from_slice(self.row(r));
            ids.push(self.row_ids[r].clone());
        }
        Self::new(self.dim, data, ids)
    }
}

fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Encodes a table as EMB1 bytes (header plus payload, without row ids).
pub fn encode_emb1(table: &EmbeddingTable) -> Vec<u8> {
    let mut buf = Vec::with_capacity(EMB1_HEADER_LEN + 4 * table.data.len());
    buf.extend_from_slice(&EMB1_MAGIC);
    buf.extend_from_slice(&(table.count as u32).to_le_bytes());
    buf.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for v in &table.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Decodes EMB1 bytes; returns `(count, dim, values)`.
pub fn decode_emb1(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 4 || bytes[..4] != EMB1_MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < EMB1_HEADER_LEN {
        return Err(Error::Truncated {
            expected: EMB1_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = EMB1_HEADER_LEN + 4 * count * dim;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes[EMB1_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, values))
}

/// Writes `path` in EMB1 format and `<path>.ids` with one row id per line.
pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_emb1(table)).map_err(|e| Error::io(path, e))?;
    let ids = ids_path(path);
    let mut text = String::new();
    for id in &table.row_ids {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(&ids, text).map_err(|e| Error::io(&ids, e))
}

/// Reads an EMB1 file and its `.ids` sidecar. A missing sidecar yields
/// row ids `"0"`, `"1"`, ...
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (count, dim, values) = decode_emb1(&bytes)?;
    let ids = ids_path(path);
    let row_ids = match std::fs::read_to_string(&ids) {
        Ok(text) => text.lines().map(str::to_owned).collect::<Vec<_>>(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            (0..count).map(|i| i.to_string()).collect()
        }
        Err(e) => return Err(Error::io(&ids, e)),
    };
    if row_ids.len() != count {
        return Err(Error::ShapeMismatch(format!(
            "{} ids in sidecar for {count} rows",
            row_ids.len()
        )));
    }
    EmbeddingTable::new(dim, values, row_ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub view_dim: usize,
    pub noise_sigma: f64,
    pub map_extent_m: f64,
    pub n_semi_positives: usize,
    /// Share of latent variance explained by a smooth function of location
    /// (0 = appearance independent of position).
    pub spatial_weight: f64,
    /// Correlation length of the spatial component, in metres.
    pub spatial_scale_m: f64,
    /// Number of leading latent dimensions the spatial component enters;
    /// the remaining dimensions stay independent of location.
    pub spatial_dims: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 2000,
            latent_dim: 32,
            view_dim: 64,
            noise_sigma: 0.6,
            map_extent_m: 10_000.0,
            n_semi_positives: 3,
            spatial_weight: 0.9,
            spatial_dims: 16,
            spatial_scale_m: 150.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::InvalidConfig("synth.n_pairs must be >= 2".into()));
        }
        if self.latent_dim == 0 || self.view_dim == 0 {
            return Err(Error::InvalidConfig("synth dims must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("synth.noise_sigma must be >= 0".into()));
        }
        if !(self.map_extent_m > 0.0) {
            return Err(Error::InvalidConfig("synth.map_extent_m must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.spatial_weight) {
            return Err(Error::InvalidConfig(
                "synth.spatial_weight must lie in [0, 1]".into(),
            ));
        }
        if !(self.spatial_scale_m > 0.0) {
            return Err(Error::InvalidConfig(
                "synth.spatial_scale_m must be > 0".into(),
            ));
        }
        if self.n_semi_positives >= self.n_pairs {
            return Err(Error::InvalidConfig(format!(
                "synth.n_semi_positives ({}) must be < n_pairs ({})",
                self.n_semi_positives, self.n_pairs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub manifest: Vec<SampleRecord>,
    pub query_features: EmbeddingTable,
    pub reference_features: EmbeddingTable,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Draws the two random view maps (`view_dim x latent_dim`) used by
/// [`generate_synthetic`] for this config.
pub fn synthetic_view_maps(cfg: &SynthConfig) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let a_q = gaussian_matrix(&mut rng, cfg.view_dim, cfg.latent_dim, scale);
    let a_r = gaussian_matrix(&mut rng, cfg.view_dim, cfg.latent_dim, scale);
    (a_q, a_r)
}

/// Synthetic two-view data with random linear view maps.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    let (a_q, a_r) = synthetic_view_maps(cfg);
    generate_synthetic_with_maps(cfg, a_q.view(), a_r.view())
}

/// Synthetic data with caller-supplied view maps of shape
/// `view_dim x latent_dim`.
///
/// Each pair has a latent `z`; the query feature is `A_q z + noise` and the
/// reference feature `A_r z + noise`. Coordinates are uniform in a square
/// of side `map_extent_m`. With `spatial_weight > 0`, the first
/// `spatial_dims` entries of `z` mix an iid Gaussian with a random
/// Fourier-feature field of the coordinate: nearby pairs share them, and the
/// remaining entries tell them apart.
pub fn generate_synthetic_with_maps(
    cfg: &SynthConfig,
    a_q: ArrayView2<'_, f64>,
    a_r: ArrayView2<'_, f64>,
) -> Result<SynthData> {
    cfg.validate()?;
    let shape = (cfg.view_dim, cfg.latent_dim);
    if a_q.dim() != shape || a_r.dim() != shape {
        return Err(Error::ShapeMismatch(format!(
            "view maps must be {shape:?}, got {:?} and {:?}",
            a_q.dim(),
            a_r.dim()
        )));
    }
    let n = cfg.n_pairs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let coords: Vec<Coordinate> = (0..n)
        .map(|_| {
            let x = rng.random::<f64>() * cfg.map_extent_m;
            let y = rng.random::<f64>() * cfg.map_extent_m;
            Coordinate::planar(x, y)
        })
        .collect();

    let mut latent = gaussian_matrix(&mut rng, n, cfg.latent_dim, 1.0);
    if cfg.spatial_weight > 0.0 {
        let field = spatial_field(&mut rng, &coords, cfg);
        let w_field = cfg.spatial_weight.sqrt();
        let w_iid = (1.0 - cfg.spatial_weight).sqrt();
        let m = cfg.spatial_dims.min(cfg.latent_dim);
        let mut head = latent.slice_mut(s![.., ..m]);
        head *= w_iid;
        head.scaled_add(w_field, &field.slice(s![.., ..m]));
    }

    let mut queries = latent.dot(&a_q.t());
    let mut references = latent.dot(&a_r.t());
    if cfg.noise_sigma > 0.0 {
        queries += &gaussian_matrix(&mut rng, n, cfg.view_dim, cfg.noise_sigma);
        references += &gaussian_matrix(&mut rng, n, cfg.view_dim, cfg.noise_sigma);
    }

    let ids: Vec<String> = (0..n).map(|i| format!("p{i:06}")).collect();
    let semi = if cfg.n_semi_positives > 0 {
        geo_topk(&coords, &coords, cfg.n_semi_positives, &GeoConfig::default())?
    } else {
        Vec::new()
    };
    let manifest = (0..n)
        .map(|i| SampleRecord {
            id: ids[i].clone(),
            pair_index: i,
            class_id: format!("c{i:06}"),
            coord: coords[i],
            positives: vec![ids[i].clone()],
            semi_positives: semi
                .get(i)
                .map(|p| p.neighbor_indices.iter().map(|&j| ids[j].clone()).collect())
                .unwrap_or_default(),
        })
        .collect();

    Ok(SynthData {
        manifest,
        query_features: EmbeddingTable::from_rows(queries.view(), ids.clone())?,
        reference_features: EmbeddingTable::from_rows(references.view(), ids)?,
    })
}

/// Random Fourier features of the coordinate, unit variance per latent
/// dimension, with correlation length `spatial_scale_m`.
fn spatial_field(rng: &mut ChaCha8Rng, coords: &[Coordinate], cfg: &SynthConfig) -> Array2<f64> {
    const FEATURES: usize = 64;
    let omega = gaussian_matrix(rng, FEATURES, 2, 1.0 / cfg.spatial_scale_m);
    let phase: Array1<f64> =
        Array1::from_shape_simple_fn(FEATURES, || rng.random::<f64>() * std::f64::consts::TAU);
    let mix = gaussian_matrix(rng, FEATURES, cfg.latent_dim, (2.0 / FEATURES as f64).sqrt());
    let basis = Array2::from_shape_fn((coords.len(), FEATURES), |(i, f)| {
        let c = &coords[i];
        (omega[[f, 0]] * c.a + omega[[f, 1]] * c.b + phase[f]).cos()
    });
    basis.dot(&mix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, pos: &[&str]) -> String {
        format!(
            r#"{{"id":"{id}","class_id":"c","x":1.0,"y":2.0,"crs":"planar","positives":{:?},"semi_positives":[]}}"#,
            pos
        )
    }

    #[test]
    fn empty_manifest() {
        assert!(parse_manifest("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn two_lines_get_dense_pair_indices() {
        let text = format!("{}\n{}\n", line("a", &["a"]), line("b", &["b"]));
        let recs = parse_manifest(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].pair_index, 0);
        assert_eq!(recs[1].pair_index, 1);
        assert_eq!(recs[1].coord, Coordinate::planar(1.0, 2.0));
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = format!("{}\n{}\n", line("a", &["a"]), line("a", &["a"]));
        match parse_manifest(text.as_bytes()) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\nnot json\n", line("a", &["a"]));
        match parse_manifest(text.as_bytes()) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_positive_rejected() {
        let text = line("a", &["zzz"]);
        assert!(matches!(
            parse_manifest(text.as_bytes()),
            Err(Error::UnknownReference { .. })
        ));
    }

    #[test]
    fn wgs84_range_checked() {
        let text = r#"{"id":"a","class_id":"c","lat":95.0,"lon":0.0,"crs":"wgs84","positives":["a"]}"#;
        assert!(matches!(
            parse_manifest(text.as_bytes()),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn semi_positive_overlapping_positive_rejected() {
        let text = r#"{"id":"a","class_id":"c","x":0,"y":0,"crs":"planar","positives":["a"],"semi_positives":["a"]}"#;
        assert!(parse_manifest(text.as_bytes()).is_err());
    }

    #[test]
    fn minimal_table_layout() {
        let t = EmbeddingTable::new(1, vec![0.5], vec!["x".into()]).unwrap();
        let bytes = encode_emb1(&t);
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..], &0.5f32.to_le_bytes());
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = EmbeddingTable::new(7, vec![], vec![]).unwrap();
        let bytes = encode_emb1(&t);
        assert_eq!(bytes.len(), 12);
        assert_eq!(decode_emb1(&bytes).unwrap(), (0, 7, vec![]));
    }

    #[test]
    fn bad_magic() {
        let err = decode_emb1(b"EMB2\0\0\0\0\0\0\0\0").unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_by_one_float() {
        let t = EmbeddingTable::new(2, vec![1.0, 2.0, 3.0, 4.0], vec!["a".into(), "b".into()])
            .unwrap();
        let bytes = encode_emb1(&t);
        match decode_emb1(&bytes[..bytes.len() - 4]) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, 28);
                assert_eq!(actual, 24);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn file_round_trip_random_8x4() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..32).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        let ids = (0..8).map(|i| format!("row{i}")).collect();
        let t = EmbeddingTable::new(4, data, ids).unwrap();
        write_embeddings(&t, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(encode_emb1(&back), encode_emb1(&t));
        assert_eq!(back, t);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig {
            n_pairs: 50,
            spatial_weight: 0.5,
            ..SynthConfig::default()
        };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn identity_maps_without_noise_give_equal_views() {
        let cfg = SynthConfig {
            n_pairs: 20,
            latent_dim: 8,
            view_dim: 8,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let eye = Array2::<f64>::eye(8);
        let d = generate_synthetic_with_maps(&cfg, eye.view(), eye.view()).unwrap();
        for i in 0..20 {
            assert_eq!(d.query_features.row(i), d.reference_features.row(i));
        }
    }

    #[test]
    fn semi_positives_are_nearest_other_references() {
        let cfg = SynthConfig {
            n_pairs: 10,
            n_semi_positives: 3,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        for r in &d.manifest {
            let mut others: Vec<(f64, usize)> = d
                .manifest
                .iter()
                .filter(|o| o.pair_index != r.pair_index)
                .map(|o| {
                    let dx = o.coord.a - r.coord.a;
                    let dy = o.coord.b - r.coord.b;
                    ((dx * dx + dy * dy).sqrt(), o.pair_index)
                })
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let expected: Vec<String> = others[..3]
                .iter()
                .map(|&(_, j)| d.manifest[j].id.clone())
                .collect();
            assert_eq!(r.semi_positives, expected);
            assert!(!r.semi_positives.contains(&r.id));
        }
    }

    #[test]
    fn too_many_semi_positives_rejected() {
        let cfg = SynthConfig {
            n_pairs: 3,
            n_semi_positives: 3,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn manifest_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let d = generate_synthetic(&SynthConfig {
            n_pairs: 12,
            ..SynthConfig::default()
        })
        .unwrap();
        write_manifest(&d.manifest, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), d.manifest);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn emb1_round_trip(count in 0usize..12, dim in 1usize..9, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data: Vec<f32> = (0..count * dim)
                    .map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff))
                    .collect();
                let ids = (0..count).map(|i| format!("id{i}")).collect();
                let t = EmbeddingTable::new(dim, data, ids).unwrap();
                let bytes = encode_emb1(&t);
                let (c, d, v) = decode_emb1(&bytes).unwrap();
                prop_assert_eq!(c, count);
                prop_assert_eq!(d, dim);
                let same_bits = v.iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same_bits);
            }
        }
    }
}
