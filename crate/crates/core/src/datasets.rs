//! Ratings ingestion, seeded train/test splits, the canonical observation
//! file format and synthetic problems with known ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng;

use crate::completion::{Observation, ObservationSet};
use crate::error::{Error, Result};
use crate::matcore::{gaussian_matrix, random_orthonormal, seeded_rng, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    /// `user\titem\trating\ttimestamp` (MovieLens 100K).
    Tab,
    /// `user::item::rating::timestamp` (MovieLens 1M).
    DoubleColon,
}

impl Delimiter {
    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::DoubleColon => line.split("::").collect(),
        }
    }
}

/// Where and how to read a ratings file. Columns are user, item, rating and
/// an optional timestamp; ids are arbitrary nonnegative integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingsFileSpec {
    pub path: PathBuf,
    pub delimiter: Delimiter,
    /// Fail on the first malformed line instead of skipping and counting it.
    pub strict: bool,
}

impl RatingsFileSpec {
    pub fn new(path: impl Into<PathBuf>, delimiter: Delimiter) -> Self {
        Self {
            path: path.into(),
            delimiter,
            strict: true,
        }
    }
}

/// A loaded ratings file. Row `i` is user `user_ids[i]` and column `j` is
/// item `item_ids[j]`; both tables are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsData {
    pub observations: ObservationSet,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    /// 1-based numbers of skipped malformed lines (lenient mode only).
    pub malformed_lines: Vec<usize>,
}

fn parse_rating(fields: &[&str]) -> std::result::Result<(u64, u64, f64), String> {
    if fields.len() < 3 || fields.len() > 4 {
        return Err(format!("expected 3 or 4 fields, found {}", fields.len()));
    }
    let user = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("bad user id {:?}: {e}", fields[0]))?;
    let item = fields[1]
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("bad item id {:?}: {e}", fields[1]))?;
    let rating = fields[2]
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bad rating {:?}: {e}", fields[2]))?;
    if !rating.is_finite() {
        return Err(format!("non-finite rating {:?}", fields[2]));
    }
    if let Some(ts) = fields.get(3) {
        ts.trim()
            .parse::<u64>()
            .map_err(|e| format!("bad timestamp {ts:?}: {e}"))?;
    }
    Ok((user, item, rating))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a ratings file, remapping ids to dense indices. A repeated
/// `(user, item)` pair keeps its last value. Blank lines are ignored.
pub fn load_ratings(spec: &RatingsFileSpec) -> Result<RatingsData> {
    let text = read_text(&spec.path)?;
    let format_error = |line: usize, message: String| Error::Format {
        path: spec.path.clone(),
        line,
        message,
    };

    let mut records: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let mut malformed_lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        match parse_rating(&spec.delimiter.split(line)) {
            Ok((user, item, rating)) => {
                records.insert((user, item), rating);
            }
            Err(message) if spec.strict => return Err(format_error(line_no, message)),
            Err(_) => malformed_lines.push(line_no),
        }
    }
    if records.is_empty() {
        return Err(format_error(0, "no records".into()));
    }

    let mut user_index: BTreeMap<u64, usize> = records.keys().map(|&(u, _)| (u, 0)).collect();
    let mut item_index: BTreeMap<u64, usize> = records.keys().map(|&(_, i)| (i, 0)).collect();
    for (k, slot) in user_index.values_mut().enumerate() {
        *slot = k;
    }
    for (k, slot) in item_index.values_mut().enumerate() {
        *slot = k;
    }
    let entries = records
        .iter()
        .map(|(&(u, i), &v)| Observation::new(user_index[&u], item_index[&i], v))
        .collect();
    let observations = ObservationSet::new(user_index.len(), item_index.len(), entries)?;
    Ok(RatingsData {
        observations,
        user_ids: user_index.into_keys().collect(),
        item_ids: item_index.into_keys().collect(),
        malformed_lines,
    })
}

/// Seeded random partition into `(train, test)`. Each entry goes to the test
/// side when its uniform draw falls below `test_fraction`. A row with at
/// least two entries that would lose all of them to the test side keeps the
/// one with the largest draw in train.
pub fn split(
    obs: &ObservationSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(ObservationSet, ObservationSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let mut rng = seeded_rng(seed);
    let draws: Vec<f64> = obs.iter().map(|_| rng.random::<f64>()).collect();
    let mut to_test: Vec<bool> = draws.iter().map(|&u| u < test_fraction).collect();

    // Entries are sorted by row, so each row is a contiguous run.
    let entries = obs.entries();
    let mut start = 0;
    while start < entries.len() {
        let row = entries[start].row;
        let end = start + entries[start..].iter().take_while(|e| e.row == row).count();
        if end - start >= 2 && to_test[start..end].iter().all(|&t| t) {
            let keep = (start..end)
                .max_by(|&a, &b| draws[a].total_cmp(&draws[b]))
                .expect("non-empty run");
            to_test[keep] = false;
        }
        start = end;
    }

    let (rows, cols) = obs.shape();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (e, &t) in entries.iter().zip(&to_test) {
        if t {
            test.push(*e);
        } else {
            train.push(*e);
        }
    }
    Ok((
        ObservationSet::new(rows, cols, train)?,
        ObservationSet::new(rows, cols, test)?,
    ))
}

/// Renders the canonical text form: a `rows cols count` header, then one
/// `row col value` line per entry (0-based, sorted). Values use the shortest
/// representation that parses back to the same `f64`.
pub fn to_canonical_string(obs: &ObservationSet) -> String {
    let (rows, cols) = obs.shape();
    let mut out = String::with_capacity(16 * (obs.len() + 1));
    let _ = writeln!(out, "{rows} {cols} {}", obs.len());
    for e in obs.iter() {
        let _ = writeln!(out, "{} {} {:?}", e.row, e.col, e.value);
    }
    out
}

pub fn parse_canonical(text: &str, path: &Path) -> Result<ObservationSet> {
    let err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| err(0, "no records".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(hline + 1, format!("bad header: {e}")))?;
    let [rows, cols, count] = dims[..] else {
        return Err(err(hline + 1, "header must be `rows cols count`".into()));
    };

    let mut entries = Vec::with_capacity(count);
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields[..] {
            [r, c, v] => r
                .parse::<usize>()
                .map_err(|e| e.to_string())
                .and_then(|r| Ok((r, c.parse::<usize>().map_err(|e| e.to_string())?)))
                .and_then(|(r, c)| Ok((r, c, v.parse::<f64>().map_err(|e| e.to_string())?))),
            _ => Err(format!("expected 3 fields, found {}", fields.len())),
        };
        let (r, c, v) = parsed.map_err(|m| err(idx + 1, m))?;
        entries.push(Observation::new(r, c, v));
    }
    if entries.len() != count {
        return Err(err(
            0,
            format!("header declares {count} entries, found {}", entries.len()),
        ));
    }
    ObservationSet::new(rows, cols, entries).map_err(|e| err(0, e.to_string()))
}

pub fn write_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    fs::write(path, to_canonical_string(obs)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    parse_canonical(&read_text(path)?, path)
}

/// Positive, nonincreasing list of singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("spectrum is empty".into()));
        }
        if values.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(
                "spectrum values must be positive".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "spectrum must be nonincreasing".into(),
            ));
        }
        Ok(Self(values))
    }

    /// `len` values evenly spaced from `first` down to `last`.
    pub fn linear(first: f64, last: f64, len: usize) -> Result<Self> {
        let values = match len {
            0 => Vec::new(),
            1 => vec![first],
            _ => (0..len)
                .map(|k| first + (last - first) * k as f64 / (len - 1) as f64)
                .collect(),
        };
        Self::new(values)
    }

    /// `first * ratio^k` for `k = 0..len`.
    pub fn geometric(first: f64, ratio: f64, len: usize) -> Result<Self> {
        Self::new((0..len).map(|k| first * ratio.powi(k as i32)).collect())
    }

    /// This spectrum followed by `tail`.
    pub fn then(self, tail: Spectrum) -> Result<Self> {
        let mut values = self.0;
        values.extend(tail.0);
        Self::new(values)
    }

    /// The default benchmark spectrum for `min(m, n)` values with a head of
    /// `rank`: a linear head from 10 to 1 followed by a tail starting at 0.1
    /// and decaying by 1% per value. The tenfold gap at the head boundary
    /// makes the rank-`rank` truncation well separated.
    pub fn gapped(rank: usize, total: usize) -> Result<Self> {
        let head = Self::linear(10.0, 1.0, rank)?;
        if total <= rank {
            return Ok(head);
        }
        head.then(Self::geometric(0.1, 0.99, total - rank)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    /// Its length is the ground-truth rank.
    pub spectrum: Spectrum,
    /// Standard deviation of i.i.d. Gaussian noise added to every entry.
    pub noise: f64,
    /// Probability with which each entry is observed.
    pub observed_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(m: usize, n: usize, spectrum: Spectrum, seed: u64) -> Self {
        Self {
            m,
            n,
            spectrum,
            noise: 0.0,
            observed_fraction: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidConfig(
                "matrix dimensions must be positive".into(),
            ));
        }
        if self.spectrum.len() > self.m.min(self.n) {
            return Err(Error::InvalidConfig(format!(
                "spectrum of length {} exceeds min({}, {})",
                self.spectrum.len(),
                self.m,
                self.n
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be nonnegative".into()));
        }
        if !(self.observed_fraction > 0.0 && self.observed_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "observed fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// `U* diag(sigma) V*^T` before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl GroundTruth {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Best rank-`r` approximation of the noiseless matrix.
    pub fn truncated(&self, r: usize) -> DenseMatrix {
        let r = r.min(self.rank());
        let mut us = self.u.columns(0, r).into_owned();
        for (j, &s) in self.singular_values[..r].iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.columns(0, r).transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub matrix: DenseMatrix,
    pub observations: ObservationSet,
    pub truth: GroundTruth,
    pub noise: f64,
}

impl SyntheticProblem {
    /// The truncated SVD `M_r` of the generated matrix, which error metrics
    /// compare against. Exact from the ground truth when noiseless.
    pub fn oracle(&self, r: usize) -> DenseMatrix {
        if self.noise == 0.0 {
            return self.truth.truncated(r);
        }
        let svd = self.matrix.clone().svd(true, true);
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested V^T");
        let mut out = DenseMatrix::zeros(self.matrix.nrows(), self.matrix.ncols());
        for &k in idx.iter().take(r) {
            out += svd.singular_values[k] * u.column(k) * vt.row(k);
        }
        out
    }
}

/// Draws `U*`, `V*` (seeded random orthonormal), then the noise, then the
/// observation mask, all from one stream seeded by `spec.seed`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticProblem> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let r = spec.spectrum.len();
    let u = random_orthonormal(spec.m, r, &mut rng)?;
    let v = random_orthonormal(spec.n, r, &mut rng)?;
    let truth = GroundTruth {
        u,
        singular_values: spec.spectrum.values().to_vec(),
        v,
    };
    let d = DenseMatrix::from_diagonal(&DVector::from_column_slice(spec.spectrum.values()));
    let mut matrix = &truth.u * d * truth.v.transpose();
    if spec.noise > 0.0 {
        matrix += gaussian_matrix(spec.m, spec.n, &mut rng) * spec.noise;
    }
    let observations = if spec.observed_fraction >= 1.0 {
        ObservationSet::full(&matrix)
    } else {
        let p = spec.observed_fraction;
        ObservationSet::masked(&matrix, |_, _| rng.random::<f64>() < p)
    };
    Ok(SyntheticProblem {
        matrix,
        observations,
        truth,
        noise: spec.noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::small_svd;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_a_tab_line() {
        let f = write_tmp("196\t242\t3\t881250949\n");
        let data = load_ratings(&RatingsFileSpec::new(f.path(), Delimiter::Tab)).unwrap();
        assert_eq!(data.observations.len(), 1);
        assert_eq!(data.observations.entries()[0], Observation::new(0, 0, 3.0));
        assert_eq!(data.user_ids, vec![196]);
        assert_eq!(data.item_ids, vec![242]);
    }

    #[test]
    fn loads_double_colon_and_remaps_densely() {
        let f = write_tmp("10::7::4::1\n2::7::1::2\n10::3::5::3\n");
        let data = load_ratings(&RatingsFileSpec::new(f.path(), Delimiter::DoubleColon)).unwrap();
        assert_eq!(data.observations.shape(), (2, 2));
        assert_eq!(data.user_ids, vec![2, 10]);
        assert_eq!(data.item_ids, vec![3, 7]);
        let e = data.observations.entries();
        assert_eq!(e[0], Observation::new(0, 1, 1.0));
        assert_eq!(e[1], Observation::new(1, 0, 5.0));
        assert_eq!(e[2], Observation::new(1, 1, 4.0));
    }

    #[test]
    fn empty_file_has_no_records() {
        let f = write_tmp("");
        let err = load_ratings(&RatingsFileSpec::new(f.path(), Delimiter::Tab)).unwrap_err();
        assert!(err.to_string().contains("no records"), "{err}");
    }

    #[test]
    fn last_duplicate_wins() {
        let f = write_tmp("1\t1\t3\t0\n1\t1\t5\t1\n");
        let data = load_ratings(&RatingsFileSpec::new(f.path(), Delimiter::Tab)).unwrap();
        assert_eq!(data.observations.entries(), &[Observation::new(0, 0, 5.0)]);
    }

    #[test]
    fn malformed_lines_strict_and_lenient() {
        let f = write_tmp("1\t1\t3\t0\nnot a rating\n2\t2\t4\t0\n");
        let mut spec = RatingsFileSpec::new(f.path(), Delimiter::Tab);
        match load_ratings(&spec).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        spec.strict = false;
        let data = load_ratings(&spec).unwrap();
        assert_eq!(data.malformed_lines, vec![2]);
        assert_eq!(data.observations.len(), 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let spec = RatingsFileSpec::new("/nonexistent/ratings.data", Delimiter::Tab);
        let err = load_ratings(&spec).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/ratings.data"));
    }

    fn grid(rows: usize, cols: usize) -> ObservationSet {
        let m = DenseMatrix::from_fn(rows, cols, |i, j| (i * cols + j) as f64);
        ObservationSet::full(&m)
    }

    #[test]
    fn split_sizes_and_partition() {
        let obs = grid(40, 25);
        let (train, test) = split(&obs, 0.2, 3).unwrap();
        assert_eq!(train.len() + test.len(), 1000);
        assert!((150..=250).contains(&test.len()), "{}", test.len());
        let mut all: Vec<_> = train.iter().chain(test.iter()).copied().collect();
        all.sort_by_key(|e| (e.row, e.col));
        assert_eq!(all, obs.entries());
    }

    #[test]
    fn split_is_deterministic() {
        let obs = grid(20, 20);
        assert_eq!(split(&obs, 0.3, 9).unwrap(), split(&obs, 0.3, 9).unwrap());
    }

    #[test]
    fn two_rating_users_keep_one_in_train() {
        let obs = grid(200, 2);
        for seed in 0..5 {
            let (train, _) = split(&obs, 0.9, seed).unwrap();
            for row in 0..200 {
                assert!(train.iter().any(|e| e.row == row), "seed {seed} row {row}");
            }
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let obs = grid(3, 3);
        assert!(split(&obs, 0.0, 0).is_err());
        assert!(split(&obs, 1.0, 0).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let obs = ObservationSet::new(
            4,
            3,
            vec![
                Observation::new(3, 2, 0.1 + 0.2),
                Observation::new(0, 1, -1e-300),
                Observation::new(2, 0, 12345.678),
            ],
        )
        .unwrap();
        let text = to_canonical_string(&obs);
        assert!(text.starts_with("4 3 3\n0 1 "));
        assert_eq!(parse_canonical(&text, Path::new("mem")).unwrap(), obs);
    }

    #[test]
    fn canonical_rejects_bad_count_and_lines() {
        assert!(parse_canonical("2 2 2\n0 0 1.0\n", Path::new("x")).is_err());
        match parse_canonical("2 2 1\n0 zero 1.0\n", Path::new("x")).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spectrum_validation() {
        assert!(Spectrum::new(vec![3.0, 1.0, 2.0]).is_err());
        assert!(Spectrum::new(vec![1.0, 0.0]).is_err());
        let g = Spectrum::gapped(20, 400).unwrap();
        assert_eq!(g.len(), 400);
        assert_eq!(g.values()[0], 10.0);
        assert_eq!(g.values()[19], 1.0);
        assert_eq!(g.values()[20], 0.1);
    }

    #[test]
    fn noiseless_synthetic_has_its_spectrum() {
        let spectrum = Spectrum::new(vec![7.0, 3.0, 2.5, 0.4]).unwrap();
        let p = make_synthetic(&SyntheticSpec::new(12, 9, spectrum.clone(), 4)).unwrap();
        // Rotate into a square core so the small SVD sees the whole matrix.
        let core = p.truth.u.tr_mul(&p.matrix) * &p.truth.v;
        let sv = small_svd(&core).unwrap().singular_values;
        for (a, b) in sv.iter().zip(spectrum.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let rest = &p.matrix - &p.truth.u * &core * p.truth.v.transpose();
        assert!(rest.norm() < 1e-12);
    }

    #[test]
    fn full_fraction_observes_everything() {
        let p = make_synthetic(&SyntheticSpec::new(
            7,
            5,
            Spectrum::linear(2.0, 1.0, 2).unwrap(),
            1,
        ))
        .unwrap();
        assert_eq!(p.observations.len(), 35);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let mut spec = SyntheticSpec::new(15, 10, Spectrum::linear(3.0, 1.0, 3).unwrap(), 21);
        spec.noise = 0.01;
        spec.observed_fraction = 0.5;
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        let bits = |p: &SyntheticProblem| p.matrix.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.observations, b.observations);
        assert!(a.observations.len() < 150 && !a.observations.is_empty());
    }

    #[test]
    fn noisy_oracle_is_best_approximation() {
        let mut spec = SyntheticSpec::new(10, 8, Spectrum::linear(5.0, 2.0, 2).unwrap(), 2);
        spec.noise = 0.05;
        let p = make_synthetic(&spec).unwrap();
        let oracle = p.oracle(2);
        let truth = p.truth.truncated(2);
        assert!((&p.matrix - &oracle).norm() <= (&p.matrix - &truth).norm() + 1e-12);
    }
}
