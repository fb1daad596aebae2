//! Interaction log ingestion, binarization, chronological splitting and
//! negative sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped user-item event. Ids are dense 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: u32,
    pub item: u32,
    pub rating: i32,
    pub timestamp: i64,
    pub attribute: u8,
}

/// A parsed interaction stream together with the id remapping tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub records: Vec<InteractionRecord>,
    pub user_count: usize,
    pub item_count: usize,
    /// Original id of each dense user index.
    pub user_ids: Vec<String>,
    /// Original id of each dense item index.
    pub item_ids: Vec<String>,
    /// Sensitive attribute of each dense user index.
    pub user_attributes: Vec<u8>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Input layout accepted by [`parse_interactions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// `UserID::MovieID::Rating::Timestamp`, users file `UserID::Gender::...`.
    MovielensDat,
    /// `user,item,rating,timestamp[,attr]` with optional header; attributes
    /// file `user,attr`.
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens-dat" | "dat" | "movielens" => Ok(InputFormat::MovielensDat),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

/// Maps raw attribute labels (e.g. `F`/`M`) onto the binary group label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeMapping {
    pub labels: BTreeMap<String, u8>,
}

impl AttributeMapping {
    /// `F -> 1`, `M -> 0`, plus numeric `0`/`1`.
    pub fn gender() -> Self {
        let labels = [("F", 1), ("M", 0), ("0", 0), ("1", 1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        AttributeMapping { labels }
    }

    pub fn numeric() -> Self {
        let labels = [("0", 0), ("1", 1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        AttributeMapping { labels }
    }

    fn resolve(&self, label: &str) -> Option<u8> {
        self.labels.get(label.trim()).copied()
    }
}

impl Default for AttributeMapping {
    fn default() -> Self {
        AttributeMapping::gender()
    }
}

struct IdTable {
    index: HashMap<String, u32>,
    ids: Vec<String>,
}

impl IdTable {
    fn new() -> Self {
        IdTable {
            index: HashMap::new(),
            ids: Vec::new(),
        }
    }

    fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&idx) = self.index.get(raw) {
            return idx;
        }
        let idx = self.ids.len() as u32;
        self.index.insert(raw.to_string(), idx);
        self.ids.push(raw.to_string());
        idx
    }
}

fn split_fields(line: &str, format: InputFormat) -> Vec<&str> {
    match format {
        InputFormat::MovielensDat => line.split("::").map(str::trim).collect(),
        InputFormat::Csv => line.split(',').map(str::trim).collect(),
    }
}

fn parse_number<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{field}`"),
    })
}

fn looks_like_header(fields: &[&str]) -> bool {
    fields
        .first()
        .map(|f| f.eq_ignore_ascii_case("user") || f.eq_ignore_ascii_case("userid"))
        .unwrap_or(false)
}

/// Reads the attribute file into a raw-id -> group map.
pub fn parse_attributes<R: Read>(
    source: R,
    format: InputFormat,
    mapping: &AttributeMapping,
) -> Result<HashMap<String, u8>> {
    let mut out = HashMap::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(&line, format);
        if format == InputFormat::Csv && line_no == 1 && looks_like_header(&fields) {
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "expected `user<sep>attribute`".into(),
            });
        }
        let attr = mapping.resolve(fields[1]).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("unmapped attribute label `{}`", fields[1]),
        })?;
        out.insert(fields[0].to_string(), attr);
    }
    Ok(out)
}

/// Parses an interaction file. Ids are remapped to dense ranges in order of
/// first appearance; record order follows the file.
///
/// `attributes` may be `None` only for CSV input whose rows carry the
/// attribute inline as a fifth column.
pub fn parse_interactions<R: Read, A: Read>(
    source: R,
    format: InputFormat,
    attributes: Option<A>,
    mapping: &AttributeMapping,
) -> Result<InteractionLog> {
    let attr_map = match attributes {
        Some(src) => Some(parse_attributes(src, format, mapping)?),
        None => None,
    };

    let mut users = IdTable::new();
    let mut items = IdTable::new();
    let mut user_attributes: Vec<Option<u8>> = Vec::new();
    let mut records = Vec::new();

    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(&line, format);
        if format == InputFormat::Csv && line_no == 1 && looks_like_header(&fields) {
            continue;
        }
        let inline_attr = match (format, fields.len()) {
            (_, 4) => None,
            (InputFormat::Csv, 5) => Some(fields[4]),
            (_, n) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 4 fields, found {n}"),
                })
            }
        };
        let rating: i32 = parse_number(fields[2], line_no, "rating")?;
        let timestamp: i64 = parse_number(fields[3], line_no, "timestamp")?;
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty id".into(),
            });
        }

        let attribute = match inline_attr {
            Some(label) => mapping.resolve(label).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("unmapped attribute label `{label}`"),
            })?,
            None => attr_map
                .as_ref()
                .and_then(|m| m.get(fields[0]).copied())
                .ok_or_else(|| Error::MissingAttribute(fields[0].to_string()))?,
        };

        let user = users.intern(fields[0]);
        let item = items.intern(fields[1]);
        if user as usize == user_attributes.len() {
            user_attributes.push(Some(attribute));
        } else if user_attributes[user as usize] != Some(attribute) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("conflicting attribute for user `{}`", fields[0]),
            });
        }
        records.push(InteractionRecord {
            user,
            item,
            rating,
            timestamp,
            attribute,
        });
    }

    Ok(InteractionLog {
        records,
        user_count: users.ids.len(),
        item_count: items.ids.len(),
        user_ids: users.ids,
        item_ids: items.ids,
        user_attributes: user_attributes.into_iter().map(|a| a.unwrap_or(0)).collect(),
    })
}

/// Keeps only records with `rating > threshold`. Counts and id tables are
/// left untouched.
pub fn binarize(log: &InteractionLog, threshold: i32) -> InteractionLog {
    InteractionLog {
        records: log
            .records
            .iter()
            .filter(|r| r.rating > threshold)
            .copied()
            .collect(),
        ..log.clone()
    }
}

/// The interactions observed during one time period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDataset {
    pub index: usize,
    /// Sorted distinct user ids.
    pub users: Vec<u32>,
    /// Sorted distinct item ids.
    pub items: Vec<u32>,
    /// Positive (user, item) pairs in chronological order.
    pub positives: Vec<(u32, u32)>,
    /// Sorted distinct positive items of every user in this period.
    pub per_user_positives: BTreeMap<u32, Vec<u32>>,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
}

impl PeriodDataset {
    pub fn from_records(index: usize, records: &[InteractionRecord]) -> Self {
        let mut users = BTreeSet::new();
        let mut items = BTreeSet::new();
        let mut per_user: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for r in records {
            users.insert(r.user);
            items.insert(r.item);
            per_user.entry(r.user).or_default().insert(r.item);
        }
        PeriodDataset {
            index,
            users: users.into_iter().collect(),
            items: items.into_iter().collect(),
            positives: records.iter().map(|r| (r.user, r.item)).collect(),
            per_user_positives: per_user
                .into_iter()
                .map(|(u, set)| (u, set.into_iter().collect()))
                .collect(),
            first_timestamp: records.first().map_or(0, |r| r.timestamp),
            last_timestamp: records.last().map_or(0, |r| r.timestamp),
        }
    }

    /// `m_t`, the number of positive interactions.
    pub fn size(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives_of(&self, user: u32) -> &[u32] {
        self.per_user_positives
            .get(&user)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// One past the largest user id, 0 if empty.
    pub fn user_bound(&self) -> usize {
        self.users.last().map_or(0, |&u| u as usize + 1)
    }

    /// One past the largest item id, 0 if empty.
    pub fn item_bound(&self) -> usize {
        self.items.last().map_or(0, |&i| i as usize + 1)
    }
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    // Absorb representation error such as 0.29 * 100 = 28.999999999999996.
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Sorts the log chronologically (stable on ties) and cuts it into a
/// pretraining period followed by `periods` equally sized dynamic periods.
/// Records beyond the two fractions are discarded.
pub fn temporal_split(
    log: &InteractionLog,
    pretrain_fraction: f64,
    dynamic_fraction: f64,
    periods: usize,
) -> Result<Vec<PeriodDataset>> {
    if !(pretrain_fraction > 0.0 && pretrain_fraction < 1.0) {
        return Err(Error::Config(format!(
            "pretrain fraction {pretrain_fraction} must lie in (0, 1)"
        )));
    }
    if !(dynamic_fraction > 0.0) || pretrain_fraction + dynamic_fraction > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "dynamic fraction {dynamic_fraction} must be positive and sum with the pretrain fraction to at most 1"
        )));
    }
    if periods == 0 {
        return Err(Error::Config("at least one dynamic period is required".into()));
    }
    if log.is_empty() {
        return Err(Error::Config("cannot split an empty log".into()));
    }

    let mut sorted = log.records.clone();
    sorted.sort_by_key(|r| r.timestamp);

    let n = sorted.len();
    let n_pre = fraction_count(pretrain_fraction, n);
    let n_dyn = fraction_count(dynamic_fraction, n).min(n - n_pre);
    if n_pre == 0 {
        return Err(Error::Config("pretraining period would be empty".into()));
    }
    if n_dyn < periods {
        return Err(Error::Config(format!(
            "{n_dyn} dynamic records cannot fill {periods} non-empty periods"
        )));
    }

    let mut out = Vec::with_capacity(periods + 1);
    out.push(PeriodDataset::from_records(0, &sorted[..n_pre]));
    let base = n_dyn / periods;
    let extra = n_dyn % periods;
    let mut start = n_pre;
    for t in 0..periods {
        let len = base + usize::from(t < extra);
        out.push(PeriodDataset::from_records(t + 1, &sorted[start..start + len]));
        start += len;
    }
    Ok(out)
}

/// A set of item ids that negative sampling must avoid.
pub trait Exclusion {
    fn excludes(&self, item: u32) -> bool;

    /// Number of excluded ids that fall inside `0..universe`.
    fn excluded_within(&self, universe: usize) -> usize;
}

/// Sorted, deduplicated slice.
impl Exclusion for [u32] {
    fn excludes(&self, item: u32) -> bool {
        self.binary_search(&item).is_ok()
    }

    fn excluded_within(&self, universe: usize) -> usize {
        self.partition_point(|&i| (i as usize) < universe)
    }
}

impl Exclusion for Vec<u32> {
    fn excludes(&self, item: u32) -> bool {
        self.as_slice().excludes(item)
    }

    fn excluded_within(&self, universe: usize) -> usize {
        self.as_slice().excluded_within(universe)
    }
}

impl Exclusion for BTreeSet<u32> {
    fn excludes(&self, item: u32) -> bool {
        self.contains(&item)
    }

    fn excluded_within(&self, universe: usize) -> usize {
        self.range(..universe.min(u32::MAX as usize) as u32).count()
    }
}

impl Exclusion for HashSet<u32> {
    fn excludes(&self, item: u32) -> bool {
        self.contains(&item)
    }

    fn excluded_within(&self, universe: usize) -> usize {
        self.iter().filter(|&&i| (i as usize) < universe).count()
    }
}

/// Union of two exclusion sets that are assumed disjoint.
pub struct Both<'a, A: ?Sized, B: ?Sized>(pub &'a A, pub &'a B);

impl<A: Exclusion + ?Sized, B: Exclusion + ?Sized> Exclusion for Both<'_, A, B> {
    fn excludes(&self, item: u32) -> bool {
        self.0.excludes(item) || self.1.excludes(item)
    }

    fn excluded_within(&self, universe: usize) -> usize {
        self.0.excluded_within(universe) + self.1.excluded_within(universe)
    }
}

/// Draws `count` distinct items uniformly from `0..universe` minus
/// `exclusion`.
pub fn sample_negatives<R: Rng + ?Sized, E: Exclusion + ?Sized>(
    rng: &mut R,
    count: usize,
    exclusion: &E,
    universe: usize,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(count);
    sample_negatives_into(rng, count, exclusion, universe, &mut out)?;
    Ok(out)
}

/// Like [`sample_negatives`] but appends into a caller-owned buffer.
pub fn sample_negatives_into<R: Rng + ?Sized, E: Exclusion + ?Sized>(
    rng: &mut R,
    count: usize,
    exclusion: &E,
    universe: usize,
    out: &mut Vec<u32>,
) -> Result<()> {
    let available = universe.saturating_sub(exclusion.excluded_within(universe));
    if available < count {
        return Err(Error::Sampling {
            requested: count,
            available,
        });
    }
    let start = out.len();
    if count == 0 {
        return Ok(());
    }

    if available * 2 >= universe {
        // Rejection sampling: expected at most two draws per accepted item
        // as long as the chosen prefix stays small relative to `available`.
        if count * 2 <= available {
            while out.len() - start < count {
                let item = rng.gen_range(0..universe) as u32;
                if !exclusion.excludes(item) && !out[start..].contains(&item) {
                    out.push(item);
                }
            }
            return Ok(());
        }
    }

    // Dense case: enumerate eligible items and run a partial Fisher-Yates.
    let mut eligible: Vec<u32> = (0..universe as u32)
        .filter(|&i| !exclusion.excludes(i))
        .collect();
    for k in 0..count {
        let j = rng.gen_range(k..eligible.len());
        eligible.swap(k, j);
        out.push(eligible[k]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_attrs() -> Option<&'static [u8]> {
        None
    }

    #[test]
    fn parses_movielens_line() {
        let log = parse_interactions(
            "1::1193::5::978300760\n".as_bytes(),
            InputFormat::MovielensDat,
            Some("1::F::1::10::48067\n".as_bytes()),
            &AttributeMapping::gender(),
        )
        .unwrap();
        assert_eq!(
            log.records,
            vec![InteractionRecord {
                user: 0,
                item: 0,
                rating: 5,
                timestamp: 978300760,
                attribute: 1
            }]
        );
        assert_eq!(log.user_ids, vec!["1"]);
        assert_eq!(log.item_ids, vec!["1193"]);
    }

    #[test]
    fn empty_source_gives_empty_log() {
        let log = parse_interactions(
            "".as_bytes(),
            InputFormat::MovielensDat,
            Some("".as_bytes()),
            &AttributeMapping::gender(),
        )
        .unwrap();
        assert!(log.is_empty());
        assert_eq!(log.user_count, 0);
        assert_eq!(log.item_count, 0);
    }

    #[test]
    fn parses_csv_with_inline_attribute() {
        let src = "user,item,rating,timestamp\n3,7,4,100,0\n9,7,2,50,1\n";
        let log = parse_interactions(src.as_bytes(), InputFormat::Csv, no_attrs(), &AttributeMapping::numeric())
            .unwrap();
        assert_eq!(
            log.records[0],
            InteractionRecord {
                user: 0,
                item: 0,
                rating: 4,
                timestamp: 100,
                attribute: 0
            }
        );
        assert_eq!(log.records[1].user, 1);
        assert_eq!(log.records[1].item, 0);
        assert_eq!(log.user_attributes, vec![0, 1]);
    }

    #[test]
    fn csv_with_attribute_file() {
        let src = "user,item,rating,timestamp\na,x,4,1\nb,y,5,2\n";
        let attrs = "user,attr\na,1\nb,0\n";
        let log = parse_interactions(
            src.as_bytes(),
            InputFormat::Csv,
            Some(attrs.as_bytes()),
            &AttributeMapping::numeric(),
        )
        .unwrap();
        assert_eq!(log.user_attributes, vec![1, 0]);
        assert_eq!(log.item_count, 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = "1::2::3::4\n1::2::x::4\n";
        let err = parse_interactions(
            src.as_bytes(),
            InputFormat::MovielensDat,
            Some("1::M\n".as_bytes()),
            &AttributeMapping::gender(),
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_attribute_names_the_user() {
        let err = parse_interactions(
            "42::2::3::4\n".as_bytes(),
            InputFormat::MovielensDat,
            Some("1::M\n".as_bytes()),
            &AttributeMapping::gender(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingAttribute(ref u) if u == "42"));
    }

    fn log_with_ratings(ratings: &[i32]) -> InteractionLog {
        InteractionLog {
            records: ratings
                .iter()
                .enumerate()
                .map(|(k, &rating)| InteractionRecord {
                    user: 0,
                    item: k as u32,
                    rating,
                    timestamp: k as i64,
                    attribute: 0,
                })
                .collect(),
            user_count: 1,
            item_count: ratings.len(),
            user_ids: vec!["0".into()],
            item_ids: (0..ratings.len()).map(|k| k.to_string()).collect(),
            user_attributes: vec![0],
        }
    }

    #[test]
    fn binarize_keeps_ratings_above_threshold() {
        let log = log_with_ratings(&[1, 2, 3, 4, 5]);
        let kept: Vec<i32> = binarize(&log, 2).records.iter().map(|r| r.rating).collect();
        assert_eq!(kept, vec![3, 4, 5]);
        assert_eq!(binarize(&log, 0), log);
        assert!(binarize(&log, 5).is_empty());
        assert_eq!(binarize(&log, 5).item_count, 5);
    }

    #[test]
    fn split_sizes() {
        let log = log_with_ratings(&[3; 100]);
        let parts = temporal_split(&log, 0.6, 0.4, 4).unwrap();
        let sizes: Vec<usize> = parts.iter().map(PeriodDataset::size).collect();
        assert_eq!(sizes, vec![60, 10, 10, 10, 10]);

        let one = temporal_split(&log, 0.6, 0.4, 1).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one[1].size(), 40);
    }

    #[test]
    fn split_movielens_fractions_discard_tail() {
        let log = log_with_ratings(&[3; 1000]);
        let parts = temporal_split(&log, 0.6, 0.28, 7).unwrap();
        assert_eq!(parts[0].size(), 600);
        assert!(parts[1..].iter().all(|p| p.size() == 40));
        let used: usize = parts.iter().map(PeriodDataset::size).sum();
        assert_eq!(used, 880);
    }

    #[test]
    fn split_rejects_empty_periods() {
        let log = log_with_ratings(&[3; 10]);
        assert!(matches!(temporal_split(&log, 0.6, 0.2, 3), Err(Error::Config(_))));
        assert!(matches!(
            temporal_split(&InteractionLog::default(), 0.6, 0.4, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_is_stable_on_timestamp_ties() {
        let mut log = log_with_ratings(&[3; 6]);
        for r in &mut log.records {
            r.timestamp = 7;
        }
        let parts = temporal_split(&log, 0.5, 0.5, 1).unwrap();
        let items: Vec<u32> = parts[0].positives.iter().map(|p| p.1).collect();
        assert_eq!(items, vec![0, 1, 2]);
    }

    #[test]
    fn forced_negative_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = sample_negatives(&mut rng, 1, &vec![0, 1, 2, 3], 5).unwrap();
        assert_eq!(got, vec![4]);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let excl = vec![3u32, 9, 27];
        let a = sample_negatives(&mut ChaCha8Rng::seed_from_u64(9), 20, &excl, 100).unwrap();
        let b = sample_negatives(&mut ChaCha8Rng::seed_from_u64(9), 20, &excl, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_excludes_full_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let history: Vec<u32> = (0..1000).step_by(3).collect();
        let got = sample_negatives(&mut rng, 100, &history, 1000).unwrap();
        let distinct: BTreeSet<u32> = got.iter().copied().collect();
        assert_eq!(distinct.len(), 100);
        assert!(got.iter().all(|i| i % 3 != 0 && *i < 1000));
    }

    #[test]
    fn sampling_reports_shortage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = sample_negatives(&mut rng, 2, &vec![0, 1, 2, 3], 5).unwrap_err();
        assert!(matches!(
            err,
            Error::Sampling {
                requested: 2,
                available: 1
            }
        ));
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000usize;
        let mut counts = [0usize; 10];
        let empty: Vec<u32> = Vec::new();
        for _ in 0..draws {
            let got = sample_negatives(&mut rng, 1, &empty, 10).unwrap();
            counts[got[0] as usize] += 1;
        }
        let p = 0.1;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "count {c} vs {mean}");
        }
    }

    #[test]
    fn dense_path_is_used_when_most_items_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let excl: Vec<u32> = (0..90).collect();
        let got = sample_negatives(&mut rng, 10, &excl, 100).unwrap();
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (90..100).collect::<Vec<_>>());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn binarize_idempotent(ratings in prop::collection::vec(1i32..=5, 0..40), th in 0i32..6) {
                let log = log_with_ratings(&ratings);
                let once = binarize(&log, th);
                prop_assert_eq!(binarize(&once, th), once.clone());
                let kept: Vec<u32> = once.records.iter().map(|r| r.item).collect();
                let mut sorted = kept.clone();
                sorted.sort_unstable();
                prop_assert_eq!(kept, sorted);
            }

            #[test]
            fn split_is_chronological_partition(
                stamps in prop::collection::vec(0i64..50, 20..120),
                periods in 1usize..5,
            ) {
                let mut log = log_with_ratings(&vec![3; stamps.len()]);
                for (r, ts) in log.records.iter_mut().zip(&stamps) {
                    r.timestamp = *ts;
                }
                let parts = temporal_split(&log, 0.5, 0.5, periods).unwrap();
                let mut seen = BTreeSet::new();
                let mut last = i64::MIN;
                for p in &parts {
                    prop_assert!(p.first_timestamp >= last);
                    last = p.last_timestamp;
                    for &(_, item) in &p.positives {
                        prop_assert!(seen.insert(item));
                    }
                }
                let dyn_sizes: Vec<usize> = parts[1..].iter().map(PeriodDataset::size).collect();
                let max = *dyn_sizes.iter().max().unwrap();
                let min = *dyn_sizes.iter().min().unwrap();
                prop_assert!(max - min <= 1);
            }

            #[test]
            fn negatives_respect_exclusion(
                seed in any::<u64>(),
                universe in 5usize..200,
                excl_raw in prop::collection::btree_set(0u32..200, 0..60),
                count in 0usize..20,
            ) {
                let excl: Vec<u32> = excl_raw.into_iter().collect();
                let available = universe - excl.excluded_within(universe);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let got = sample_negatives(&mut rng, count, &excl, universe);
                if available < count {
                    prop_assert!(got.is_err());
                } else {
                    let got = got.unwrap();
                    let distinct: BTreeSet<u32> = got.iter().copied().collect();
                    prop_assert_eq!(distinct.len(), count);
                    prop_assert!(got.iter().all(|i| !excl.excludes(*i) && (*i as usize) < universe));
                }
            }
        }
    }
}
