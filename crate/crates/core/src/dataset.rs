//! Choice panels and indicator matrices.
//!
//! Choice data is read in long format (one row per respondent, situation and
//! alternative) and stored as a dense panel over the global alternative set:
//! alternatives absent from a situation are recorded as unavailable with zero
//! attributes. Indicator data is read in wide format, one row per respondent.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders identifiers numerically when both parse as integers, lexically otherwise.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<i64>(), b.trim().parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct IdKey(String);

impl Ord for IdKey {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_ids(&self.0, &other.0)
    }
}

impl PartialOrd for IdKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One choice situation over the dataset's full alternative set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Situation {
    pub id: String,
    /// `J x A` attribute values, row-major by alternative.
    pub attributes: Vec<f64>,
    pub available: Vec<bool>,
    pub chosen: usize,
}

impl Situation {
    pub fn attribute_row(&self, alternative: usize, n_attributes: usize) -> &[f64] {
        &self.attributes[alternative * n_attributes..(alternative + 1) * n_attributes]
    }

    pub fn n_available(&self) -> usize {
        self.available.iter().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub id: String,
    pub situations: Vec<Situation>,
    /// Values aligned with [`ChoiceDataset::covariate_names`].
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDataset {
    pub respondents: Vec<RespondentRecord>,
    pub attribute_names: Vec<String>,
    pub alternative_ids: Vec<String>,
    pub covariate_names: Vec<String>,
}

impl ChoiceDataset {
    /// Builds a dataset from parts, checking every panel invariant.
    pub fn new(
        respondents: Vec<RespondentRecord>,
        attribute_names: Vec<String>,
        alternative_ids: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let data = Self {
            respondents,
            attribute_names,
            alternative_ids,
            covariate_names,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n_alt = self.alternative_ids.len();
        let n_attr = self.attribute_names.len();
        let mut seen = HashSet::new();
        for r in &self.respondents {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateRespondent(r.id.clone()));
            }
            if r.situations.is_empty() {
                return Err(Error::Precondition(format!(
                    "respondent `{}` has no choice situations",
                    r.id
                )));
            }
            if r.covariates.len() != self.covariate_names.len() {
                return Err(Error::Shape(format!(
                    "respondent `{}` has {} covariates, expected {}",
                    r.id,
                    r.covariates.len(),
                    self.covariate_names.len()
                )));
            }
            if let Some(v) = r.covariates.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("covariate {v} for `{}`", r.id)));
            }
            for s in &r.situations {
                if s.available.len() != n_alt || s.attributes.len() != n_alt * n_attr {
                    return Err(Error::Shape(format!(
                        "respondent `{}`, situation `{}`: attribute block does not match {} alternatives x {} attributes",
                        r.id, s.id, n_alt, n_attr
                    )));
                }
                if s.chosen >= n_alt || !s.available[s.chosen] {
                    return Err(Error::ChosenUnavailable {
                        respondent: r.id.clone(),
                        situation: s.id.clone(),
                    });
                }
                if s.n_available() < 2 {
                    return Err(Error::TooFewAvailable {
                        respondent: r.id.clone(),
                        situation: s.id.clone(),
                    });
                }
                if s.attributes.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "attribute in respondent `{}`, situation `{}`",
                        r.id, s.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternative_ids.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    /// Total number of choice situations across respondents.
    pub fn n_situations(&self) -> usize {
        self.respondents.iter().map(|r| r.situations.len()).sum()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|a| a == name)
    }

    pub fn alternative_index(&self, id: &str) -> Option<usize> {
        self.alternative_ids.iter().position(|a| a == id)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|a| a == name)
    }

    pub fn respondent_ids(&self) -> Vec<String> {
        self.respondents.iter().map(|r| r.id.clone()).collect()
    }

    /// Keeps only respondents whose id is in `ids`, preserving order.
    pub fn restrict(&self, ids: &HashSet<&str>) -> ChoiceDataset {
        ChoiceDataset {
            respondents: self
                .respondents
                .iter()
                .filter(|r| ids.contains(r.id.as_str()))
                .cloned()
                .collect(),
            attribute_names: self.attribute_names.clone(),
            alternative_ids: self.alternative_ids.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }
}

/// Column mapping for long-format choice files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChoiceSchema {
    pub respondent: String,
    pub situation: String,
    pub alternative: String,
    pub available: String,
    pub chosen: String,
    /// Attribute columns; empty means every column not otherwise mapped.
    pub attributes: Vec<String>,
    /// Respondent-level columns, constant within respondent.
    pub covariates: Vec<String>,
}

impl Default for ChoiceSchema {
    fn default() -> Self {
        Self {
            respondent: "resp_id".into(),
            situation: "task_id".into(),
            alternative: "alt_id".into(),
            available: "avail".into(),
            chosen: "chosen".into(),
            attributes: Vec::new(),
            covariates: Vec::new(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_number(raw: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("non-numeric {what} `{raw}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what} `{raw}`"),
        });
    }
    Ok(v)
}

fn parse_flag(raw: &str, line: u64, what: &str) -> Result<bool> {
    let v = parse_number(raw, line, what)?;
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::Parse {
            line,
            message: format!("{what} must be 0 or 1, got `{raw}`"),
        })
    }
}

struct RawRow {
    available: bool,
    chosen: bool,
    attributes: Vec<f64>,
}

/// Reads a long-format choice CSV.
///
/// Respondents, situations and alternatives are ordered by id (numeric ids
/// numerically), so the same bytes always give the same in-memory layout.
pub fn load_choice_data<R: Read>(source: R, schema: &ChoiceSchema) -> Result<ChoiceDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let resp_col = column(&headers, &schema.respondent)?;
    let sit_col = column(&headers, &schema.situation)?;
    let alt_col = column(&headers, &schema.alternative)?;
    let avail_col = column(&headers, &schema.available)?;
    let chosen_col = column(&headers, &schema.chosen)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mapped: HashSet<usize> = [resp_col, sit_col, alt_col, avail_col, chosen_col]
        .into_iter()
        .chain(cov_cols.iter().copied())
        .collect();
    let (attribute_names, attr_cols): (Vec<String>, Vec<usize>) = if schema.attributes.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !mapped.contains(i))
            .map(|(i, h)| (h.trim().to_string(), i))
            .unzip()
    } else {
        let cols = schema
            .attributes
            .iter()
            .map(|a| column(&headers, a))
            .collect::<Result<Vec<_>>>()?;
        (schema.attributes.clone(), cols)
    };

    type SituationRows = BTreeMap<IdKey, RawRow>;
    let mut panel: BTreeMap<IdKey, BTreeMap<IdKey, SituationRows>> = BTreeMap::new();
    let mut covariates: HashMap<String, Vec<f64>> = HashMap::new();
    let mut alternatives: BTreeMap<IdKey, ()> = BTreeMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| record.get(i).unwrap_or("");
        let resp = get(resp_col).to_string();
        let sit = get(sit_col).to_string();
        let alt = get(alt_col).to_string();
        let available = parse_flag(get(avail_col), line, "availability")?;
        let chosen = parse_flag(get(chosen_col), line, "chosen flag")?;
        let attributes = attr_cols
            .iter()
            .zip(&attribute_names)
            .map(|(&i, name)| parse_number(get(i), line, &format!("attribute `{name}`")))
            .collect::<Result<Vec<_>>>()?;
        let cov = cov_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, name)| parse_number(get(i), line, &format!("covariate `{name}`")))
            .collect::<Result<Vec<_>>>()?;
        match covariates.get(&resp) {
            Some(prev) if *prev != cov => {
                return Err(Error::Parse {
                    line,
                    message: format!("covariates vary within respondent `{resp}`"),
                })
            }
            Some(_) => {}
            None => {
                covariates.insert(resp.clone(), cov);
            }
        }
        alternatives.insert(IdKey(alt.clone()), ());
        let rows = panel
            .entry(IdKey(resp.clone()))
            .or_default()
            .entry(IdKey(sit.clone()))
            .or_default();
        if rows.contains_key(&IdKey(alt.clone())) {
            return Err(Error::DuplicateRow {
                respondent: resp,
                situation: sit,
                alternative: alt,
            });
        }
        rows.insert(
            IdKey(alt),
            RawRow {
                available,
                chosen,
                attributes,
            },
        );
    }

    let alternative_ids: Vec<String> = alternatives.into_keys().map(|k| k.0).collect();
    let alt_pos: HashMap<&str, usize> = alternative_ids
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();
    let n_alt = alternative_ids.len();
    let n_attr = attribute_names.len();

    let mut respondents = Vec::with_capacity(panel.len());
    for (resp, situations) in panel {
        let mut out = Vec::with_capacity(situations.len());
        for (sit, rows) in situations {
            let chosen: Vec<&IdKey> = rows
                .iter()
                .filter(|(_, r)| r.chosen)
                .map(|(k, _)| k)
                .collect();
            if chosen.len() != 1 {
                return Err(Error::ChosenCount {
                    respondent: resp.0.clone(),
                    situation: sit.0.clone(),
                    count: chosen.len(),
                });
            }
            if !rows[chosen[0]].available {
                return Err(Error::ChosenUnavailable {
                    respondent: resp.0.clone(),
                    situation: sit.0.clone(),
                });
            }
            let chosen_index = alt_pos[chosen[0].0.as_str()];
            let mut attributes = vec![0.0; n_alt * n_attr];
            let mut available = vec![false; n_alt];
            for (alt, row) in &rows {
                let j = alt_pos[alt.0.as_str()];
                available[j] = row.available;
                attributes[j * n_attr..(j + 1) * n_attr].copy_from_slice(&row.attributes);
            }
            out.push(Situation {
                id: sit.0,
                attributes,
                available,
                chosen: chosen_index,
            });
        }
        let covariates = covariates.remove(&resp.0).unwrap_or_default();
        respondents.push(RespondentRecord {
            id: resp.0,
            situations: out,
            covariates,
        });
    }

    ChoiceDataset::new(
        respondents,
        attribute_names,
        alternative_ids,
        schema.covariates.clone(),
    )
}

/// Writes a dataset in the long format read by [`load_choice_data`] with the default schema.
///
/// Every alternative of every situation is written, including padded
/// unavailable ones, so reloading reproduces the same structure.
pub fn write_choice_data<W: Write>(data: &ChoiceDataset, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let schema = ChoiceSchema::default();
    let mut header = vec![
        schema.respondent.clone(),
        schema.situation.clone(),
        schema.alternative.clone(),
        schema.available.clone(),
        schema.chosen.clone(),
    ];
    header.extend(data.attribute_names.iter().cloned());
    header.extend(data.covariate_names.iter().cloned());
    writer.write_record(&header)?;
    let n_attr = data.n_attributes();
    for r in &data.respondents {
        for s in &r.situations {
            for (j, alt) in data.alternative_ids.iter().enumerate() {
                let mut row = vec![
                    r.id.clone(),
                    s.id.clone(),
                    alt.clone(),
                    (s.available[j] as u8).to_string(),
                    ((s.chosen == j) as u8).to_string(),
                ];
                row.extend(s.attribute_row(j, n_attr).iter().map(|v| v.to_string()));
                row.extend(r.covariates.iter().map(|v| v.to_string()));
                writer.write_record(&row)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Respondent-level indicator responses (or factor scores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorMatrix {
    pub respondent_ids: Vec<String>,
    pub indicator_names: Vec<String>,
    /// Row-major `N x K`; missing cells hold NaN.
    pub values: Vec<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
    pub missing_mask: Vec<bool>,
}

impl IndicatorMatrix {
    /// Builds a matrix from optional cells, checking ids and range.
    pub fn from_rows(
        respondent_ids: Vec<String>,
        indicator_names: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
        scale: (f64, f64),
    ) -> Result<Self> {
        let k = indicator_names.len();
        if rows.len() != respondent_ids.len() {
            return Err(Error::Shape(format!(
                "{} rows for {} respondent ids",
                rows.len(),
                respondent_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut values = Vec::with_capacity(rows.len() * k);
        let mut missing_mask = Vec::with_capacity(rows.len() * k);
        for (id, row) in respondent_ids.iter().zip(&rows) {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateRespondent(id.clone()));
            }
            if row.len() != k {
                return Err(Error::Shape(format!(
                    "respondent `{id}` has {} values, expected {k}",
                    row.len()
                )));
            }
            for (cell, name) in row.iter().zip(&indicator_names) {
                match *cell {
                    Some(v) => {
                        if !v.is_finite() || v < scale.0 || v > scale.1 {
                            return Err(Error::OutOfRange {
                                respondent: id.clone(),
                                indicator: name.clone(),
                                value: v,
                                min: scale.0,
                                max: scale.1,
                            });
                        }
                        values.push(v);
                        missing_mask.push(false);
                    }
                    None => {
                        values.push(f64::NAN);
                        missing_mask.push(true);
                    }
                }
            }
        }
        Ok(Self {
            respondent_ids,
            indicator_names,
            values,
            scale_min: scale.0,
            scale_max: scale.1,
            missing_mask,
        })
    }

    pub fn n_respondents(&self) -> usize {
        self.respondent_ids.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.indicator_names.len()
    }

    pub fn get(&self, n: usize, k: usize) -> Option<f64> {
        let i = n * self.n_indicators() + k;
        if self.missing_mask[i] {
            None
        } else {
            Some(self.values[i])
        }
    }

    pub fn column(&self, k: usize) -> Vec<Option<f64>> {
        (0..self.n_respondents()).map(|n| self.get(n, k)).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<Option<f64>>> {
        self.indicator_index(name).map(|k| self.column(k))
    }

    pub fn indicator_index(&self, name: &str) -> Option<usize> {
        self.indicator_names.iter().position(|n| n == name)
    }

    pub fn row(&self, n: usize) -> Vec<Option<f64>> {
        (0..self.n_indicators()).map(|k| self.get(n, k)).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.missing_mask.iter().filter(|&&m| m).count()
    }

    /// Reorders (and subsets) rows to follow `ids`; unknown ids are an error.
    pub fn reorder(&self, ids: &[String]) -> Result<IndicatorMatrix> {
        let pos: HashMap<&str, usize> = self
            .respondent_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .map(|&n| self.row(n))
                    .ok_or_else(|| Error::UnknownName(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        IndicatorMatrix::from_rows(
            ids.to_vec(),
            self.indicator_names.clone(),
            rows,
            (self.scale_min, self.scale_max),
        )
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<IndicatorMatrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.indicator_index(n)
                    .ok_or_else(|| Error::UnknownName(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = (0..self.n_respondents())
            .map(|n| idx.iter().map(|&k| self.get(n, k)).collect())
            .collect();
        IndicatorMatrix::from_rows(
            self.respondent_ids.clone(),
            names.to_vec(),
            rows,
            (self.scale_min, self.scale_max),
        )
    }
}

/// Column mapping for wide-format indicator files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorSchema {
    pub respondent: String,
    /// Indicator columns; empty means every other column.
    pub indicators: Vec<String>,
}

impl Default for IndicatorSchema {
    fn default() -> Self {
        Self {
            respondent: "resp_id".into(),
            indicators: Vec::new(),
        }
    }
}

/// Reads a wide-format indicator CSV. Blank cells are flagged missing, never imputed.
pub fn load_indicators<R: Read>(
    source: R,
    schema: &IndicatorSchema,
    scale: (f64, f64),
) -> Result<IndicatorMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let id_col = column(&headers, &schema.respondent)?;
    let (names, cols): (Vec<String>, Vec<usize>) = if schema.indicators.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col)
            .map(|(i, h)| (h.trim().to_string(), i))
            .unzip()
    } else {
        let cols = schema
            .indicators
            .iter()
            .map(|c| column(&headers, c))
            .collect::<Result<Vec<_>>>()?;
        (schema.indicators.clone(), cols)
    };

    let mut rows: BTreeMap<IdKey, Vec<Option<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record.get(id_col).unwrap_or("").to_string();
        let mut row = Vec::with_capacity(cols.len());
        for (&c, name) in cols.iter().zip(&names) {
            let raw = record.get(c).unwrap_or("").trim();
            if raw.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric value `{raw}` for `{name}`"),
            })?;
            if v.is_nan() || v < scale.0 || v > scale.1 {
                return Err(Error::OutOfRange {
                    respondent: id.clone(),
                    indicator: name.clone(),
                    value: v,
                    min: scale.0,
                    max: scale.1,
                });
            }
            row.push(Some(v));
        }
        if rows.insert(IdKey(id.clone()), row).is_some() {
            return Err(Error::DuplicateRespondent(id));
        }
    }
    let (ids, rows): (Vec<String>, Vec<Vec<Option<f64>>>) =
        rows.into_iter().map(|(k, v)| (k.0, v)).unzip();
    IndicatorMatrix::from_rows(ids, names, rows, scale)
}

/// Writes an indicator matrix with blank cells for missing values.
pub fn write_indicators<W: Write>(m: &IndicatorMatrix, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["resp_id".to_string()];
    header.extend(m.indicator_names.iter().cloned());
    writer.write_record(&header)?;
    for (n, id) in m.respondent_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(
            m.row(n)
                .into_iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Choice data and indicators restricted to their common respondents, in choice-data order.
#[derive(Debug, Clone)]
pub struct JoinedPanel {
    pub choices: ChoiceDataset,
    pub indicators: IndicatorMatrix,
    /// Respondents dropped because they have no indicator row.
    pub choice_only: Vec<String>,
    /// Respondents dropped because they have no choice data.
    pub indicator_only: Vec<String>,
}

impl JoinedPanel {
    pub fn n_dropped(&self) -> usize {
        self.choice_only.len() + self.indicator_only.len()
    }

    /// Copies the choice data with the named indicator columns appended as
    /// respondent covariates. Respondents missing any of those columns are dropped.
    pub fn with_covariates(&self, columns: &[String]) -> Result<ChoiceDataset> {
        for c in columns {
            if self.choices.covariate_names.contains(c) {
                return Err(Error::InvalidSpec(format!(
                    "covariate `{c}` already present"
                )));
            }
        }
        let idx = columns
            .iter()
            .map(|c| {
                self.indicators
                    .indicator_index(c)
                    .ok_or_else(|| Error::UnknownName(c.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut respondents = Vec::with_capacity(self.choices.n_respondents());
        let mut incomplete = 0usize;
        for (n, r) in self.choices.respondents.iter().enumerate() {
            let extra: Option<Vec<f64>> = idx.iter().map(|&k| self.indicators.get(n, k)).collect();
            match extra {
                Some(extra) => {
                    let mut r = r.clone();
                    r.covariates.extend(extra);
                    respondents.push(r);
                }
                None => incomplete += 1,
            }
        }
        if incomplete > 0 {
            log::warn!("{incomplete} respondents dropped for missing covariate values");
        }
        if respondents.is_empty() {
            return Err(Error::EmptyIntersection);
        }
        let mut covariate_names = self.choices.covariate_names.clone();
        covariate_names.extend(columns.iter().cloned());
        ChoiceDataset::new(
            respondents,
            self.choices.attribute_names.clone(),
            self.choices.alternative_ids.clone(),
            covariate_names,
        )
    }
}

/// Matches respondents by id; respondents present in only one source are dropped and reported.
pub fn join(choices: &ChoiceDataset, indicators: &IndicatorMatrix) -> Result<JoinedPanel> {
    let ind_ids: HashSet<&str> = indicators
        .respondent_ids
        .iter()
        .map(|s| s.as_str())
        .collect();
    let choice_ids: HashSet<&str> = choices.respondents.iter().map(|r| r.id.as_str()).collect();
    let common: HashSet<&str> = choice_ids.intersection(&ind_ids).copied().collect();
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let choice_only: Vec<String> = choices
        .respondents
        .iter()
        .filter(|r| !common.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    let indicator_only: Vec<String> = indicators
        .respondent_ids
        .iter()
        .filter(|id| !common.contains(id.as_str()))
        .cloned()
        .collect();
    let restricted = choices.restrict(&common);
    let aligned = indicators.reorder(&restricted.respondent_ids())?;
    let dropped = choice_only.len() + indicator_only.len();
    if dropped > 0 {
        log::warn!(
            "join dropped {dropped} respondents ({} without indicators, {} without choices)",
            choice_only.len(),
            indicator_only.len()
        );
    }
    Ok(JoinedPanel {
        choices: restricted,
        indicators: aligned,
        choice_only,
        indicator_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "resp_id,task_id,alt_id,avail,chosen,x\n1,1,a,1,0,0.5\n1,1,b,1,1,1.5\n";

    #[test]
    fn minimal_input() {
        let d = load_choice_data(MINIMAL.as_bytes(), &ChoiceSchema::default()).unwrap();
        assert_eq!(d.n_respondents(), 1);
        assert_eq!(d.n_situations(), 1);
        assert_eq!(d.n_alternatives(), 2);
        assert_eq!(d.respondents[0].situations[0].chosen, 1);
        assert_eq!(d.attribute_names, vec!["x"]);
    }

    #[test]
    fn chosen_unavailable_is_rejected() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x\n1,1,a,1,0,0\n1,1,b,0,1,1\n";
        let err = load_choice_data(src.as_bytes(), &ChoiceSchema::default()).unwrap_err();
        assert!(err.to_string().contains("chosen unavailable"), "{err}");
    }

    #[test]
    fn multiple_or_zero_chosen_rejected() {
        let two = "resp_id,task_id,alt_id,avail,chosen,x\n1,1,a,1,1,0\n1,1,b,1,1,1\n";
        assert!(matches!(
            load_choice_data(two.as_bytes(), &ChoiceSchema::default()),
            Err(Error::ChosenCount { count: 2, .. })
        ));
        let none = "resp_id,task_id,alt_id,avail,chosen,x\n1,1,a,1,0,0\n1,1,b,1,0,1\n";
        assert!(matches!(
            load_choice_data(none.as_bytes(), &ChoiceSchema::default()),
            Err(Error::ChosenCount { count: 0, .. })
        ));
    }

    #[test]
    fn duplicate_triple_rejected() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x\n1,1,a,1,0,0\n1,1,a,1,1,1\n";
        assert!(matches!(
            load_choice_data(src.as_bytes(), &ChoiceSchema::default()),
            Err(Error::DuplicateRow { .. })
        ));
    }

    #[test]
    fn non_numeric_attribute_rejected() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x\n1,1,a,1,0,abc\n1,1,b,1,1,1\n";
        assert!(matches!(
            load_choice_data(src.as_bytes(), &ChoiceSchema::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn malformed_csv_rejected() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x\n1,1,a,1,0\n";
        assert!(load_choice_data(src.as_bytes(), &ChoiceSchema::default()).is_err());
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x\n\
                   10,2,a,1,1,0\n10,2,b,1,0,0\n10,1,a,1,0,0\n10,1,b,1,1,0\n\
                   9,1,a,1,1,0\n9,1,b,1,0,0\n";
        let d = load_choice_data(src.as_bytes(), &ChoiceSchema::default()).unwrap();
        assert_eq!(d.respondent_ids(), vec!["9", "10"]);
        let sits: Vec<&str> = d.respondents[1]
            .situations
            .iter()
            .map(|s| s.id.as_str())
            .collect();
        assert_eq!(sits, vec!["1", "2"]);
    }

    #[test]
    fn varying_choice_sets_are_padded() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x\n\
                   1,1,a,1,1,2\n1,1,b,1,0,3\n1,2,a,1,0,4\n1,2,b,1,0,5\n1,2,c,1,1,6\n";
        let d = load_choice_data(src.as_bytes(), &ChoiceSchema::default()).unwrap();
        assert_eq!(d.n_alternatives(), 3);
        let s0 = &d.respondents[0].situations[0];
        assert_eq!(s0.available, vec![true, true, false]);
        assert_eq!(s0.attributes, vec![2.0, 3.0, 0.0]);
    }

    #[test]
    fn covariates_must_be_constant_within_respondent() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x,age\n1,1,a,1,1,0,30\n1,1,b,1,0,0,31\n";
        let schema = ChoiceSchema {
            covariates: vec!["age".into()],
            ..Default::default()
        };
        assert!(load_choice_data(src.as_bytes(), &schema).is_err());
    }

    #[test]
    fn indicator_out_of_range() {
        let src = "resp_id,q1,q2\n1,3,8\n";
        let err =
            load_indicators(src.as_bytes(), &IndicatorSchema::default(), (1.0, 7.0)).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn indicator_missing_mask() {
        let full = "resp_id,q1,q2\n1,3,7\n2,1,4\n";
        let m = load_indicators(full.as_bytes(), &IndicatorSchema::default(), (1.0, 7.0)).unwrap();
        assert!(m.missing_mask.iter().all(|&x| !x));
        let gap = "resp_id,q1,q2\n1,3,\n2,1,4\n";
        let m = load_indicators(gap.as_bytes(), &IndicatorSchema::default(), (1.0, 7.0)).unwrap();
        assert_eq!(m.n_missing(), 1);
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.get(1, 1), Some(4.0));
    }

    #[test]
    fn indicator_duplicate_id() {
        let src = "resp_id,q1\n1,3\n1,4\n";
        assert!(matches!(
            load_indicators(src.as_bytes(), &IndicatorSchema::default(), (1.0, 7.0)),
            Err(Error::DuplicateRespondent(_))
        ));
    }

    fn two_respondents() -> ChoiceDataset {
        let src = "resp_id,task_id,alt_id,avail,chosen,x\n\
                   1,1,a,1,1,0\n1,1,b,1,0,1\n2,1,a,1,0,0\n2,1,b,1,1,1\n";
        load_choice_data(src.as_bytes(), &ChoiceSchema::default()).unwrap()
    }

    #[test]
    fn join_identical_ids() {
        let ind = load_indicators(
            "resp_id,q\n2,5\n1,4\n".as_bytes(),
            &IndicatorSchema::default(),
            (1.0, 7.0),
        )
        .unwrap();
        let j = join(&two_respondents(), &ind).unwrap();
        assert_eq!(j.n_dropped(), 0);
        assert_eq!(j.indicators.respondent_ids, vec!["1", "2"]);
        assert_eq!(j.indicators.get(0, 0), Some(4.0));
    }

    #[test]
    fn join_drops_unmatched() {
        let ind = load_indicators(
            "resp_id,q\n2,5\n".as_bytes(),
            &IndicatorSchema::default(),
            (1.0, 7.0),
        )
        .unwrap();
        let j = join(&two_respondents(), &ind).unwrap();
        assert_eq!(j.n_dropped(), 1);
        assert_eq!(j.choice_only, vec!["1"]);
        assert_eq!(j.choices.n_respondents(), 1);
    }

    #[test]
    fn join_disjoint_is_error() {
        let ind = load_indicators(
            "resp_id,q\n7,5\n".as_bytes(),
            &IndicatorSchema::default(),
            (1.0, 7.0),
        )
        .unwrap();
        assert!(matches!(
            join(&two_respondents(), &ind),
            Err(Error::EmptyIntersection)
        ));
    }

    #[test]
    fn covariates_attach_complete_cases() {
        let ind = load_indicators(
            "resp_id,q\n1,\n2,5\n".as_bytes(),
            &IndicatorSchema::default(),
            (1.0, 7.0),
        )
        .unwrap();
        let j = join(&two_respondents(), &ind).unwrap();
        let d = j.with_covariates(&["q".to_string()]).unwrap();
        assert_eq!(d.n_respondents(), 1);
        assert_eq!(d.respondents[0].covariates, vec![5.0]);
        assert_eq!(d.covariate_names, vec!["q"]);
    }

    #[test]
    fn write_then_reload_is_identical() {
        let src = "resp_id,task_id,alt_id,avail,chosen,x,y\n\
                   1,1,a,1,1,0.1,2\n1,1,b,1,0,1e-7,3\n1,2,a,1,0,4,5\n1,2,b,1,0,5,5\n1,2,c,1,1,-6.25,7\n";
        let d = load_choice_data(src.as_bytes(), &ChoiceSchema::default()).unwrap();
        let mut buf = Vec::new();
        write_choice_data(&d, &mut buf).unwrap();
        let again = load_choice_data(buf.as_slice(), &ChoiceSchema::default()).unwrap();
        assert_eq!(d, again);
    }
}
