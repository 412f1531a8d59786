//! Nonnegative motion-primitive dictionaries.
//!
//! Training segments are flattened into the columns of `V` (15N × segments),
//! shifted row-wise so every entry is positive, and factorized as `V ≈ W H`
//! with Frobenius multiplicative updates. A trajectory is generated from a
//! weight vector `h` as `W h - offset`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use nalgebra::{DMatrix, DVector, DVectorView, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{flatten_frames, Finger, FlatVector, Trajectory, COORDS_PER_FRAME, FINGERS};
use crate::stats::BoxStats;

/// Smallest entry of a shifted training matrix.
pub const DEFAULT_SHIFT_MARGIN: f64 = 1e-6;
/// Floor of the multiplicative-update denominators.
const DENOM_FLOOR: f64 = 1e-12;
pub const DICT_FORMAT: &str = "primdict/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfConfig {
    pub primitives: usize,
    pub max_iters: usize,
    /// Stop once the relative objective decrease of one iteration drops below
    /// this value.
    pub rel_tol: f64,
    pub seed: u64,
    /// Upper end of the uniform initialization; derived from the data mean when
    /// unset.
    pub init_scale: Option<f64>,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            primitives: 200,
            max_iters: 400,
            rel_tol: 1e-6,
            seed: 0,
            init_scale: None,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.primitives < 1 {
            return Err(Error::InvalidParameter("at least one primitive is required".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("rel_tol {} must be positive", self.rel_tol)));
        }
        if let Some(s) = self.init_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidParameter(format!("init_scale {s} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-row shift making a matrix nonnegative: `offset_r = max(0, margin - min_r)`.
pub fn nonneg_shift(v: &DMatrix<f64>, margin: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if v.ncols() == 0 || v.nrows() == 0 {
        return Err(Error::Shape("cannot shift an empty matrix".into()));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("training matrix must be finite".into()));
    }
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("shift margin {margin}")));
    }
    let offset = DVector::from_fn(v.nrows(), |r, _| (margin - v.row(r).min()).max(0.0));
    Ok((add_offset(v, &offset), offset))
}

fn add_offset(v: &DMatrix<f64>, offset: &DVector<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for mut col in out.column_iter_mut() {
        col += offset;
    }
    out
}

/// Stacks flattened segments as columns. All segments must share a length.
pub fn training_matrix(segments: &[Trajectory]) -> Result<DMatrix<f64>> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidInput("no training segments".into()))?;
    let rows = first.len() * COORDS_PER_FRAME;
    let mut v = DMatrix::zeros(rows, segments.len());
    for (j, seg) in segments.iter().enumerate() {
        if seg.len() != first.len() {
            return Err(Error::Shape(format!(
                "segment {j} has {} frames, expected {}",
                seg.len(),
                first.len()
            )));
        }
        v.set_column(j, seg.flatten().values());
    }
    Ok(v)
}

/// Outcome of a factorization.
#[derive(Debug, Clone)]
pub struct NmfFactors {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// `‖V - WH‖²` after initialization and after every iteration.
    pub objective: Vec<f64>,
    pub converged: bool,
}

impl NmfFactors {
    pub fn iterations(&self) -> usize {
        self.objective.len() - 1
    }

    pub fn relative_error(&self, v: &DMatrix<f64>) -> f64 {
        (v - &self.w * &self.h).norm() / v.norm()
    }
}

/// Frobenius NMF by multiplicative updates, single-threaded and deterministic
/// in `cfg.seed`.
pub fn train_nmf(v: &DMatrix<f64>, cfg: &NmfConfig) -> Result<NmfFactors> {
    train_nmf_with(v, cfg, |_, _| {})
}

/// As [`train_nmf`], calling `observe(iteration, objective)` after each
/// update.
pub fn train_nmf_with(
    v: &DMatrix<f64>,
    cfg: &NmfConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<NmfFactors> {
    cfg.validate()?;
    let (m, n, k) = (v.nrows(), v.ncols(), cfg.primitives);
    if m == 0 || n == 0 {
        return Err(Error::Shape("training matrix is empty".into()));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "NMF input must be finite and nonnegative, found {x}"
        )));
    }
    if k > n {
        log::warn!("{k} primitives exceed the {n} training columns");
    }

    let scale = cfg
        .init_scale
        .unwrap_or_else(|| 2.0 * (v.mean() / k as f64).sqrt())
        .max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // random() lies in [0, 1), so scale * (1 - u) lies in (0, scale].
    let mut w = DMatrix::from_fn(m, k, |_, _| scale * (1.0 - rng.random::<f64>()));
    let mut h = DMatrix::from_fn(k, n, |_, _| scale * (1.0 - rng.random::<f64>()));

    let mut wtv = DMatrix::zeros(k, n);
    let mut wtw = DMatrix::zeros(k, k);
    let mut wtwh = DMatrix::zeros(k, n);
    let mut ht = DMatrix::zeros(n, k);
    let mut vht = DMatrix::zeros(m, k);
    let mut hht = DMatrix::zeros(k, k);
    let mut whht = DMatrix::zeros(m, k);
    let mut wh = DMatrix::zeros(m, n);

    let mut objective = vec![residual(v, &w, &h, &mut wh)];
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        w.tr_mul_to(v, &mut wtv);
        w.tr_mul_to(&w, &mut wtw);
        wtw.mul_to(&h, &mut wtwh);
        multiplicative_step(&mut h, &wtv, &wtwh);

        h.transpose_to(&mut ht);
        v.mul_to(&ht, &mut vht);
        h.mul_to(&ht, &mut hht);
        w.mul_to(&hht, &mut whht);
        multiplicative_step(&mut w, &vht, &whht);

        let obj = residual(v, &w, &h, &mut wh);
        observe(it, obj);
        let prev = *objective.last().expect("seeded with the initial objective");
        objective.push(obj);
        if prev - obj <= cfg.rel_tol * prev {
            converged = true;
            break;
        }
    }
    Ok(NmfFactors {
        w,
        h,
        objective,
        converged,
    })
}

fn multiplicative_step(x: &mut DMatrix<f64>, num: &DMatrix<f64>, den: &DMatrix<f64>) {
    for ((xi, ni), di) in x.iter_mut().zip(num.iter()).zip(den.iter()) {
        *xi *= ni / di.max(DENOM_FLOOR);
    }
}

fn residual(v: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, wh: &mut DMatrix<f64>) -> f64 {
    w.mul_to(h, wh);
    v.iter().zip(wh.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// A trained primitive matrix with the shift that made its training data
/// nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    w: DMatrix<f64>,
    offset: DVector<f64>,
    frames: usize,
    rate_hz: f64,
    object: String,
    seed: u64,
}

impl Dictionary {
    pub fn new(
        w: DMatrix<f64>,
        offset: DVector<f64>,
        rate_hz: f64,
        object: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if w.ncols() < 1 {
            return Err(Error::Shape("a dictionary needs at least one primitive".into()));
        }
        if w.nrows() == 0 || !w.nrows().is_multiple_of(COORDS_PER_FRAME) || w.nrows() / COORDS_PER_FRAME < 2 {
            return Err(Error::Shape(format!(
                "dictionary row count {} is not 15 N with N >= 2",
                w.nrows()
            )));
        }
        if offset.len() != w.nrows() {
            return Err(Error::Shape(format!(
                "offset length {} differs from row count {}",
                offset.len(),
                w.nrows()
            )));
        }
        if let Some(x) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidInput(format!("primitive entry {x} is not finite and nonnegative")));
        }
        if !offset.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("offset must be finite".into()));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling rate {rate_hz} Hz")));
        }
        Ok(Dictionary {
            frames: w.nrows() / COORDS_PER_FRAME,
            w,
            offset,
            rate_hz,
            object: object.into(),
            seed,
        })
    }

    /// Shifts and factorizes the training segments.
    pub fn train(
        segments: &[Trajectory],
        cfg: &NmfConfig,
        object: impl Into<String>,
    ) -> Result<(Dictionary, NmfFactors)> {
        Self::train_with(segments, cfg, object, |_, _| {})
    }

    pub fn train_with(
        segments: &[Trajectory],
        cfg: &NmfConfig,
        object: impl Into<String>,
        observe: impl FnMut(usize, f64),
    ) -> Result<(Dictionary, NmfFactors)> {
        let v = training_matrix(segments)?;
        let rate = segments[0].rate_hz();
        if segments.iter().any(|s| s.rate_hz() != rate) {
            return Err(Error::InvalidInput("training segments differ in sampling rate".into()));
        }
        let (shifted, offset) = nonneg_shift(&v, DEFAULT_SHIFT_MARGIN)?;
        let factors = train_nmf_with(&shifted, cfg, observe)?;
        let dict = Dictionary::new(factors.w.clone(), offset, rate, object, cfg.seed)?;
        Ok((dict, factors))
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// Frames per generated trajectory.
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    pub fn primitives(&self) -> usize {
        self.w.ncols()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Index of the first row of instant `t`.
    pub fn frame_row(&self, t: usize) -> usize {
        assert!(t < self.frames, "instant {t} outside {} frames", self.frames);
        t * COORDS_PER_FRAME
    }

    pub fn check_weights(&self, h: &DVector<f64>) -> Result<()> {
        if h.len() != self.primitives() {
            return Err(Error::Shape(format!(
                "weight vector has {} entries, dictionary has {} primitives",
                h.len(),
                self.primitives()
            )));
        }
        if !h.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite".into()));
        }
        Ok(())
    }

    /// `W h - offset` in the flat layout.
    pub fn generate_flat(&self, h: &DVector<f64>) -> Result<FlatVector> {
        self.check_weights(h)?;
        FlatVector::new(&self.w * h - &self.offset)
    }

    pub fn generate(&self, h: &DVector<f64>) -> Result<Trajectory> {
        self.generate_flat(h)?.unflatten(self.rate_hz)
    }

    /// Least-squares weights `W⁺ (V_test + offset)`, one column per test
    /// segment. Entries may be negative.
    pub fn reconstruct_weights(&self, v_test: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v_test.nrows() != self.rows() {
            return Err(Error::Shape(format!(
                "test matrix has {} rows, dictionary has {}",
                v_test.nrows(),
                self.rows()
            )));
        }
        Ok(self.pseudo_inverse() * add_offset(v_test, &self.offset))
    }

    /// Moore–Penrose pseudo-inverse of `W`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let svd = SVD::new(self.w.clone(), true, true);
        let smax = svd.singular_values.max();
        let tol = smax * f64::EPSILON * self.w.nrows().max(self.w.ncols()) as f64;
        svd.pseudo_inverse(tol).expect("both singular bases were computed")
    }

    pub fn to_file(&self) -> DictionaryFile {
        let mut bytes = Vec::with_capacity(8 * self.w.len());
        for r in 0..self.w.nrows() {
            for c in 0..self.w.ncols() {
                bytes.extend_from_slice(&self.w[(r, c)].to_le_bytes());
            }
        }
        DictionaryFile {
            format: DICT_FORMAT.into(),
            frames: self.frames,
            rate_hz: self.rate_hz,
            primitives: self.primitives(),
            rows: self.rows(),
            object: self.object.clone(),
            seed: self.seed,
            offset: self.offset.iter().copied().collect(),
            w: BASE64.encode(bytes),
        }
    }

    pub fn from_file(file: DictionaryFile) -> Result<Self> {
        if file.format != DICT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported dictionary format `{}`, expected `{DICT_FORMAT}`",
                file.format
            )));
        }
        if file.rows != file.frames * COORDS_PER_FRAME {
            return Err(Error::Format(format!(
                "{} rows do not match {} frames",
                file.rows, file.frames
            )));
        }
        let bytes = BASE64
            .decode(file.w.as_bytes())
            .map_err(|e| Error::Format(format!("primitive block is not base64: {e}")))?;
        if bytes.len() != 8 * file.rows * file.primitives {
            return Err(Error::Format(format!(
                "primitive block holds {} bytes, expected {}",
                bytes.len(),
                8 * file.rows * file.primitives
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
            .collect();
        let w = DMatrix::from_row_slice(file.rows, file.primitives, &values);
        Dictionary::new(w, DVector::from_vec(file.offset), file.rate_hz, file.object, file.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("dictionary file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Dictionary::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dictionary::from_json(&text)
    }
}

/// Serialized dictionary: JSON header plus the primitive matrix as base64,
/// row-major, little-endian f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub format: String,
    pub frames: usize,
    pub rate_hz: f64,
    pub primitives: usize,
    pub rows: usize,
    pub object: String,
    pub seed: u64,
    pub offset: Vec<f64>,
    pub w: String,
}

/// Error summary of one finger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerError {
    pub finger: Finger,
    #[serde(flatten)]
    pub stats: BoxStats,
}

/// Reconstruction errors in meters over all instants of all test segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconStats {
    pub segments: usize,
    pub instants: usize,
    pub fingers: Vec<FingerError>,
    pub overall: BoxStats,
}

impl ReconStats {
    pub fn finger(&self, finger: Finger) -> &BoxStats {
        &self.fingers[finger.index()].stats
    }

    /// Summary of per-instant distances such as those of
    /// [`reconstruction_distances`].
    pub fn from_distances(dists: &[[f64; FINGERS]], segments: usize) -> Result<ReconStats> {
        let empty = || Error::InvalidInput("no test instants".into());
        let fingers = Finger::ALL
            .iter()
            .map(|&finger| {
                let col: Vec<f64> = dists.iter().map(|d| d[finger.index()]).collect();
                BoxStats::from_values(&col)
                    .map(|stats| FingerError { finger, stats })
                    .ok_or_else(empty)
            })
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<f64> = dists.iter().flatten().copied().collect();
        Ok(ReconStats {
            segments,
            instants: dists.len(),
            fingers,
            overall: BoxStats::from_values(&all).ok_or_else(empty)?,
        })
    }
}

/// Per-instant fingertip distances between test data and `W H̃ - offset`.
/// Row `s * N + t` holds instant `t` of segment `s`.
pub fn reconstruction_distances(
    v_test: &DMatrix<f64>,
    dict: &Dictionary,
    h_tilde: &DMatrix<f64>,
) -> Result<Vec<[f64; FINGERS]>> {
    if v_test.nrows() != dict.rows() || h_tilde.nrows() != dict.primitives() || h_tilde.ncols() != v_test.ncols() {
        return Err(Error::Shape(format!(
            "test matrix {}x{}, weights {}x{} and dictionary {}x{} are inconsistent",
            v_test.nrows(),
            v_test.ncols(),
            h_tilde.nrows(),
            h_tilde.ncols(),
            dict.rows(),
            dict.primitives()
        )));
    }
    let approx = dict.w() * h_tilde;
    let mut out = Vec::with_capacity(v_test.ncols() * dict.frames());
    for s in 0..v_test.ncols() {
        let recorded = v_test.column(s);
        // Subtracting the offset on both sides leaves `V - W H̃ + offset`.
        let generated = approx.column(s) - dict.offset();
        out.extend(instant_distances(recorded, generated.as_view(), dict.frames()));
    }
    Ok(out)
}

fn instant_distances<'a>(
    a: DVectorView<'a, f64>,
    b: DVectorView<'a, f64>,
    frames: usize,
) -> impl Iterator<Item = [f64; FINGERS]> + 'a {
    (0..frames).map(move |t| {
        std::array::from_fn(|j| {
            let r = t * COORDS_PER_FRAME + 3 * j;
            (a.rows(r, 3) - b.rows(r, 3)).norm()
        })
    })
}

pub fn reconstruction_error(
    v_test: &DMatrix<f64>,
    dict: &Dictionary,
    h_tilde: &DMatrix<f64>,
) -> Result<ReconStats> {
    let dists = reconstruction_distances(v_test, dict, h_tilde)?;
    ReconStats::from_distances(&dists, v_test.ncols())
}

/// Flattened final frames of several trajectories, one per column.
pub fn final_frames_matrix(trajs: &[Trajectory]) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = trajs
        .iter()
        .map(|t| flatten_frames(std::slice::from_ref(t.last())).into_inner())
        .collect();
    DMatrix::from_columns(&cols)
}
