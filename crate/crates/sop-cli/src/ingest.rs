//! CSV ingestion with schema validation and line-numbered errors.

use nalgebra::DMatrix;
use std::collections::HashMap;
use std::path::Path;

/// Scatter data for the single-curve fits.
#[derive(Debug, Clone)]
pub struct XyData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub trials: Option<Vec<f64>>,
}

/// Balanced panel data for the subject-level fits. Columns of `y` are
/// subjects in the stored order; rows follow the ascending time grid.
#[derive(Debug, Clone)]
pub struct PanelData {
    pub t: Vec<f64>,
    pub y: DMatrix<f64>,
    pub subjects: Vec<String>,
    pub groups: Option<Vec<u8>>,
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, String> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, String> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        format!(
            "{}: missing required column '{name}' (found: {})",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(", ")
        )
    })
}

fn parse_number(field: &str, column: &str, line: usize, path: &Path) -> Result<f64, String> {
    let v: f64 = field.trim().parse().map_err(|_| {
        format!(
            "{} line {line}: column '{column}' is not numeric: '{field}'",
            path.display()
        )
    })?;
    if !v.is_finite() {
        return Err(format!(
            "{} line {line}: column '{column}' is not finite: '{field}'",
            path.display()
        ));
    }
    Ok(v)
}

/// Read an `x,y` file, optionally with a `trials` column.
pub fn ingest_xy(path: &Path, need_trials: bool) -> Result<XyData, String> {
    let mut rdr = open(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .clone();
    let ix = column_index(&headers, "x", path)?;
    let iy = column_index(&headers, "y", path)?;
    let itrials = if need_trials {
        Some(column_index(&headers, "trials", path)?)
    } else {
        None
    };

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut trials = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| format!("{} line {line}: {e}", path.display()))?;
        x.push(parse_number(&record[ix], "x", line, path)?);
        y.push(parse_number(&record[iy], "y", line, path)?);
        if let Some(it) = itrials {
            let m = parse_number(&record[it], "trials", line, path)?;
            if m < 1.0 || m.fract() != 0.0 {
                return Err(format!(
                    "{} line {line}: column 'trials' must be a positive integer, got '{}'",
                    path.display(),
                    &record[it]
                ));
            }
            trials.push(m);
        }
    }
    if x.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok(XyData {
        x,
        y,
        trials: itrials.map(|_| trials),
    })
}

/// Read a `t,y,subject[,group]` file into a balanced panel.
///
/// Subjects keep their first-appearance order, except that group models are
/// reordered group-0-first (stably) to match the model builder's layout.
pub fn ingest_panel(path: &Path, with_group: bool) -> Result<PanelData, String> {
    let mut rdr = open(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .clone();
    let it = column_index(&headers, "t", path)?;
    let iy = column_index(&headers, "y", path)?;
    let isubj = column_index(&headers, "subject", path)?;
    let igroup = if with_group {
        Some(column_index(&headers, "group", path)?)
    } else {
        None
    };

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    let mut groups: HashMap<String, u8> = HashMap::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| format!("{} line {line}: {e}", path.display()))?;
        let t = parse_number(&record[it], "t", line, path)?;
        let y = parse_number(&record[iy], "y", line, path)?;
        let subject = record[isubj].trim().to_string();
        if subject.is_empty() {
            return Err(format!(
                "{} line {line}: column 'subject' is empty",
                path.display()
            ));
        }
        if let Some(ig) = igroup {
            let g = match record[ig].trim() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(format!(
                        "{} line {line}: column 'group' must be 0 or 1, got '{other}'",
                        path.display()
                    ));
                }
            };
            match groups.get(&subject) {
                Some(&prev) if prev != g => {
                    return Err(format!(
                        "{} line {line}: subject '{subject}' appears in both groups",
                        path.display()
                    ));
                }
                _ => {
                    groups.insert(subject.clone(), g);
                }
            }
        }
        if !rows.contains_key(&subject) {
            order.push(subject.clone());
        }
        rows.entry(subject).or_default().push((t, y));
    }
    if order.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }

    if igroup.is_some() {
        // stable controls-first ordering expected by the group model
        order = order
            .iter()
            .filter(|s| groups[*s] == 0)
            .chain(order.iter().filter(|s| groups[*s] == 1))
            .cloned()
            .collect();
    }

    let mut grid: Option<Vec<f64>> = None;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    for subject in &order {
        let mut obs = rows.remove(subject).unwrap();
        obs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in obs.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(format!(
                    "{}: subject '{subject}' has duplicate time {}",
                    path.display(),
                    pair[0].0
                ));
            }
        }
        let t_subj: Vec<f64> = obs.iter().map(|o| o.0).collect();
        match &grid {
            None => grid = Some(t_subj),
            Some(g) => {
                if g.len() != t_subj.len() {
                    return Err(format!(
                        "{}: unbalanced panel: subject '{subject}' has {} observations, \
                         subject '{}' has {}",
                        path.display(),
                        t_subj.len(),
                        order[0],
                        g.len()
                    ));
                }
                if g.iter().zip(&t_subj).any(|(a, b)| a != b) {
                    return Err(format!(
                        "{}: unbalanced panel: subject '{subject}' is observed on a \
                         different time grid than subject '{}'",
                        path.display(),
                        order[0]
                    ));
                }
            }
        }
        columns.push(obs.iter().map(|o| o.1).collect());
    }

    let t = grid.unwrap();
    let s = t.len();
    let m = order.len();
    let y = DMatrix::from_fn(s, m, |i, j| columns[j][i]);
    let groups_vec = igroup.map(|_| order.iter().map(|s| groups[s]).collect());
    Ok(PanelData {
        t,
        y,
        subjects: order,
        groups: groups_vec,
    })
}
