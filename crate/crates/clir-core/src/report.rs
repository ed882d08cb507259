//! Aggregation of evaluation results into AVG/OVR score tables with
//! delta-vs-baseline annotations, rendered as markdown, CSV or JSON.
//!
//! Aggregates are always computed on full-precision values; the 2-decimal
//! rounding happens only at display time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{all_combos, display_2dp, parse_direction, Score, TaskDirection};
use crate::error::{Error, Result};
use crate::evaluator::EvalResultFile;

/// Arithmetic mean of one direction's per-dataset scores.
pub fn direction_avg(scores: &[Score]) -> Result<Score> {
    if scores.is_empty() {
        return Err(Error::Precondition("direction average of no scores".into()));
    }
    let mean = scores.iter().map(|s| s.value()).sum::<f64>() / scores.len() as f64;
    Score::new(mean)
}

/// Arithmetic mean of direction averages: two for a per-side OVR, four for
/// the overall OVR.
pub fn ovr(direction_avgs: &[Score]) -> Result<Score> {
    if direction_avgs.is_empty() {
        return Err(Error::Precondition("OVR of no direction averages".into()));
    }
    direction_avg(direction_avgs)
}

/// Delta-bin magnitude thresholds in percentage points, configurable
/// because no canonical scale exists for the color coding they replace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaBinConfig {
    pub light: f64,
    pub strong: f64,
}

impl Default for DeltaBinConfig {
    fn default() -> Self {
        DeltaBinConfig {
            light: 0.5,
            strong: 1.5,
        }
    }
}

impl DeltaBinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.light > 0.0 && self.strong > self.light) {
            return Err(Error::Precondition(format!(
                "delta bins must satisfy 0 < light < strong, got {} / {}",
                self.light, self.strong
            )));
        }
        Ok(())
    }
}

/// Signed magnitude bin of a non-zero delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaBin {
    ImprovementLight,
    ImprovementMedium,
    ImprovementStrong,
    DeclineLight,
    DeclineMedium,
    DeclineStrong,
}

impl DeltaBin {
    pub fn glyph(self) -> &'static str {
        match self {
            DeltaBin::ImprovementLight => "+",
            DeltaBin::ImprovementMedium => "++",
            DeltaBin::ImprovementStrong => "+++",
            DeltaBin::DeclineLight => "-",
            DeltaBin::DeclineMedium => "--",
            DeltaBin::DeclineStrong => "---",
        }
    }
}

/// Bins a full-precision delta; exactly zero has no bin.
pub fn classify_delta(delta: f64, cfg: &DeltaBinConfig) -> Option<DeltaBin> {
    if delta == 0.0 {
        return None;
    }
    let magnitude = delta.abs();
    let improvement = delta > 0.0;
    Some(match (magnitude < cfg.light, magnitude < cfg.strong, improvement) {
        (true, _, true) => DeltaBin::ImprovementLight,
        (false, true, true) => DeltaBin::ImprovementMedium,
        (false, false, true) => DeltaBin::ImprovementStrong,
        (true, _, false) => DeltaBin::DeclineLight,
        (false, true, false) => DeltaBin::DeclineMedium,
        (false, false, false) => DeltaBin::DeclineStrong,
    })
}

/// Per-(model, dataset, direction) scores plus the baseline marker.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    rows: BTreeMap<String, BTreeMap<(String, TaskDirection), f64>>,
    baseline: Option<String>,
}

impl ScoreTable {
    pub fn new() -> Self {
        ScoreTable::default()
    }

    pub fn add_score(
        &mut self,
        model: impl Into<String>,
        dataset: impl Into<String>,
        direction: TaskDirection,
        score: Score,
    ) {
        self.rows
            .entry(model.into())
            .or_default()
            .insert((dataset.into(), direction), score.value());
    }

    pub fn add_result(&mut self, model: impl Into<String>, result: &EvalResultFile) {
        self.rows
            .entry(model.into())
            .or_default()
            .insert((result.dataset.clone(), result.direction), result.mean_ndcg_pct);
    }

    pub fn set_baseline(&mut self, label: impl Into<String>) {
        self.baseline = Some(label.into());
    }

    pub fn baseline(&self) -> Option<&str> {
        self.baseline.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every row must cover the same (dataset, direction) column set, and a
    /// declared baseline must exist as a row.
    pub fn validate(&self) -> Result<()> {
        let mut expected: Option<&BTreeMap<(String, TaskDirection), f64>> = None;
        for (label, cells) in &self.rows {
            match expected {
                None => expected = Some(cells),
                Some(first) => {
                    if first.keys().ne(cells.keys()) {
                        return Err(Error::Precondition(format!(
                            "row {label:?} covers a different column set than the first row"
                        )));
                    }
                }
            }
        }
        if let Some(baseline) = &self.baseline {
            if !self.rows.contains_key(baseline) {
                return Err(Error::Precondition(format!(
                    "baseline {baseline:?} has no row"
                )));
            }
        }
        Ok(())
    }

    fn datasets(&self) -> Vec<String> {
        let mut datasets = BTreeSet::new();
        for cells in self.rows.values() {
            for (dataset, _) in cells.keys() {
                datasets.insert(dataset.clone());
            }
        }
        datasets.into_iter().collect()
    }

    fn directions(&self) -> BTreeSet<TaskDirection> {
        self.rows
            .values()
            .flat_map(|cells| cells.keys().map(|(_, d)| *d))
            .collect()
    }

    /// Baseline first, then combo-named rows in the canonical combination
    /// order, then everything else alphabetically.
    pub fn ordered_labels(&self) -> Vec<String> {
        let mut ordered = Vec::new();
        if let Some(baseline) = &self.baseline {
            if self.rows.contains_key(baseline) {
                ordered.push(baseline.clone());
            }
        }
        for combo in all_combos() {
            let label = combo.render();
            if self.rows.contains_key(&label) && !ordered.contains(&label) {
                ordered.push(label);
            }
        }
        for label in self.rows.keys() {
            if !ordered.contains(label) {
                ordered.push(label.clone());
            }
        }
        ordered
    }

    /// Columns in reporting order: per-dataset cells, direction AVGs and
    /// the OVR for the cross block, then the same for the mono block.
    pub fn columns(&self) -> Vec<Column> {
        let datasets = self.datasets();
        let present = self.directions();
        let mut columns = Vec::new();
        for cross in [true, false] {
            let block: Vec<TaskDirection> = TaskDirection::all()
                .into_iter()
                .filter(|d| d.is_cross() == cross && present.contains(d))
                .collect();
            if block.is_empty() {
                continue;
            }
            for dataset in &datasets {
                for direction in &block {
                    columns.push(Column::Cell {
                        dataset: dataset.clone(),
                        direction: *direction,
                    });
                }
            }
            for direction in &block {
                columns.push(Column::DirectionAvg { direction: *direction });
            }
            columns.push(Column::Ovr { cross });
        }
        columns
    }

    /// Full-precision value of one column for one row.
    pub fn value(&self, label: &str, column: &Column) -> Result<f64> {
        let cells = self
            .rows
            .get(label)
            .ok_or_else(|| Error::Precondition(format!("no row {label:?}")))?;
        let cell = |dataset: &str, direction: TaskDirection| -> Result<Score> {
            cells
                .get(&(dataset.to_string(), direction))
                .copied()
                .map(Score::new)
                .ok_or_else(|| {
                    Error::Precondition(format!(
                        "row {label:?} missing cell ({dataset}, {direction})"
                    ))
                })?
        };
        let avg_of = |direction: TaskDirection| -> Result<Score> {
            let scores: Vec<Score> = self
                .datasets()
                .iter()
                .map(|d| cell(d, direction))
                .collect::<Result<_>>()?;
            direction_avg(&scores)
        };
        match column {
            Column::Cell { dataset, direction } => Ok(cell(dataset, *direction)?.value()),
            Column::DirectionAvg { direction } => Ok(avg_of(*direction)?.value()),
            Column::Ovr { cross } => {
                let avgs: Vec<Score> = TaskDirection::all()
                    .into_iter()
                    .filter(|d| d.is_cross() == *cross && self.directions().contains(d))
                    .map(avg_of)
                    .collect::<Result<_>>()?;
                Ok(ovr(&avgs)?.value())
            }
        }
    }
}

/// One rendered column of the table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Cell { dataset: String, direction: TaskDirection },
    DirectionAvg { direction: TaskDirection },
    Ovr { cross: bool },
}

impl Column {
    pub fn header(&self) -> String {
        match self {
            Column::Cell { dataset, direction } => format!("{dataset} {direction}"),
            Column::DirectionAvg { direction } => format!("AVG {direction}"),
            Column::Ovr { cross: true } => "Cross OVR".to_string(),
            Column::Ovr { cross: false } => "Mono OVR".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::Parse(format!(
                "unknown table format {other:?} (markdown, csv or json)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub format: TableFormat,
    pub bins: DeltaBinConfig,
    /// Annotate every non-baseline cell with its delta vs the baseline row.
    pub deltas: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            format: TableFormat::Markdown,
            bins: DeltaBinConfig::default(),
            deltas: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct RenderedCell {
    column: String,
    value: f64,
    display: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bin: Option<DeltaBin>,
    bold: bool,
    underline: bool,
}

#[derive(Debug, Serialize)]
struct RenderedRow {
    model: String,
    cells: Vec<RenderedCell>,
}

#[derive(Debug, Serialize)]
struct RenderedTable {
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<String>,
    columns: Vec<String>,
    rows: Vec<RenderedRow>,
}

fn build_rendered(table: &ScoreTable, opts: &RenderOptions) -> Result<RenderedTable> {
    table.validate()?;
    opts.bins.validate()?;
    if table.is_empty() {
        return Err(Error::Precondition("cannot render an empty score table".into()));
    }
    if opts.deltas && table.baseline.is_none() {
        return Err(Error::Precondition(
            "deltas requested but the table has no baseline row".into(),
        ));
    }
    let labels = table.ordered_labels();
    let columns = table.columns();

    // Full-precision grid, column-major marks for max / second-max.
    let mut grid: Vec<Vec<f64>> = Vec::with_capacity(labels.len());
    for label in &labels {
        let row: Vec<f64> = columns
            .iter()
            .map(|c| table.value(label, c))
            .collect::<Result<_>>()?;
        grid.push(row);
    }
    let mut bold = vec![vec![false; columns.len()]; labels.len()];
    let mut underline = vec![vec![false; columns.len()]; labels.len()];
    for col in 0..columns.len() {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by(|&a, &b| {
            grid[b][col]
                .partial_cmp(&grid[a][col])
                .expect("scores are finite")
                .then(a.cmp(&b))
        });
        bold[order[0]][col] = true;
        if order.len() > 1 {
            underline[order[1]][col] = true;
        }
    }

    let baseline_row = table
        .baseline
        .as_ref()
        .map(|b| labels.iter().position(|l| l == b).expect("validated"));

    let mut rows = Vec::with_capacity(labels.len());
    for (r, label) in labels.iter().enumerate() {
        let mut cells = Vec::with_capacity(columns.len());
        for (c, column) in columns.iter().enumerate() {
            let value = grid[r][c];
            let (delta, bin) = match (opts.deltas, baseline_row) {
                (true, Some(b)) if b != r => {
                    let delta = value - grid[b][c];
                    (Some(delta), classify_delta(delta, &opts.bins))
                }
                _ => (None, None),
            };
            cells.push(RenderedCell {
                column: column.header(),
                value,
                display: display_2dp(value),
                delta,
                bin,
                bold: bold[r][c],
                underline: underline[r][c],
            });
        }
        rows.push(RenderedRow {
            model: label.clone(),
            cells,
        });
    }
    Ok(RenderedTable {
        baseline: table.baseline.clone(),
        columns: columns.iter().map(Column::header).collect(),
        rows,
    })
}

/// Renders the table in the requested format. Markdown carries the
/// bold/underline marks and inline deltas; CSV carries the same numbers in
/// plain columns; JSON mirrors the whole structure.
pub fn render_table(table: &ScoreTable, opts: &RenderOptions) -> Result<String> {
    let rendered = build_rendered(table, opts)?;
    Ok(match opts.format {
        TableFormat::Markdown => render_markdown(&rendered),
        TableFormat::Csv => render_csv(&rendered, opts.deltas),
        TableFormat::Json => {
            let mut text = serde_json::to_string_pretty(&rendered).expect("serializable");
            text.push('\n');
            text
        }
    })
}

fn render_markdown(table: &RenderedTable) -> String {
    let mut out = String::new();
    out.push_str("| Model |");
    for column in &table.columns {
        out.push_str(&format!(" {column} |"));
    }
    out.push('\n');
    out.push_str("| --- |");
    for _ in &table.columns {
        out.push_str(" --- |");
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!("| {} |", row.model));
        for cell in &row.cells {
            let mut text = cell.display.clone();
            if cell.bold {
                text = format!("**{text}**");
            } else if cell.underline {
                text = format!("<u>{text}</u>");
            }
            if let Some(delta) = cell.delta {
                match cell.bin {
                    Some(bin) => {
                        text.push_str(&format!(" ({} {})", display_signed_2dp(delta), bin.glyph()))
                    }
                    None => text.push_str(&format!(" ({})", display_signed_2dp(delta))),
                }
            }
            out.push_str(&format!(" {text} |"));
        }
        out.push('\n');
    }
    out
}

fn render_csv(table: &RenderedTable, deltas: bool) -> String {
    let mut out = String::new();
    out.push_str("model");
    for column in &table.columns {
        out.push_str(&format!(",{}", csv_escape(column)));
    }
    if deltas {
        for column in &table.columns {
            out.push_str(&format!(",{} delta", csv_escape(column)));
        }
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&csv_escape(&row.model));
        for cell in &row.cells {
            out.push_str(&format!(",{}", cell.display));
        }
        if deltas {
            for cell in &row.cells {
                match cell.delta {
                    Some(delta) => out.push_str(&format!(",{}", display_signed_2dp(delta))),
                    None => out.push(','),
                }
            }
        }
        out.push('\n');
    }
    out
}

fn display_signed_2dp(delta: f64) -> String {
    if delta < 0.0 {
        format!("-{}", display_2dp(-delta))
    } else {
        format!("+{}", display_2dp(delta))
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Loads eval-result files into a table. `results` may be a directory of
/// per-model entries (a `<model>.json` file with one result or an array, or
/// a `<model>/` directory of result files) or a single such entry.
/// `baseline` points at one more entry whose label becomes the baseline row.
pub fn load_score_table(results: &Path, baseline: Option<&Path>) -> Result<ScoreTable> {
    let mut table = ScoreTable::new();
    if results.is_dir() && dir_has_result_files(results)? {
        // A single model directory of result files.
        add_model_entry(&mut table, results)?;
    } else if results.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(results)
            .map_err(|e| Error::io(results, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(results, e))?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.is_dir() || path.extension().is_some_and(|ext| ext == "json") {
                add_model_entry(&mut table, &path)?;
            }
        }
    } else {
        add_model_entry(&mut table, results)?;
    }
    if let Some(baseline_path) = baseline {
        let label = add_model_entry(&mut table, baseline_path)?;
        table.set_baseline(label);
    }
    table.validate()?;
    Ok(table)
}

fn dir_has_result_files(path: &Path) -> Result<bool> {
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        if entry.path().is_dir() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn add_model_entry(table: &mut ScoreTable, path: &Path) -> Result<String> {
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Precondition(format!("cannot derive a model label from {path:?}")))?
        .to_string();
    for result in load_results_entry(path)? {
        table.add_result(&label, &result);
    }
    Ok(label)
}

fn load_results_entry(path: &Path) -> Result<Vec<EvalResultFile>> {
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        entries.sort_by_key(|e| e.file_name());
        let mut results = Vec::new();
        for entry in entries {
            let file = entry.path();
            if file.extension().is_some_and(|ext| ext == "json") {
                results.extend(load_results_file(&file)?);
            }
        }
        Ok(results)
    } else {
        load_results_file(path)
    }
}

fn load_results_file(path: &Path) -> Result<Vec<EvalResultFile>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("not valid JSON: {e}")))?;
    let results: Vec<EvalResultFile> = if value.is_array() {
        serde_json::from_value(value)
            .map_err(|e| Error::format(path, format!("bad result array: {e}")))?
    } else {
        vec![serde_json::from_value(value)
            .map_err(|e| Error::format(path, format!("bad result object: {e}")))?]
    };
    for result in &results {
        result.validate().map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(results)
}

/// Parses the `--bins light,strong` flag form.
pub fn parse_bins(text: &str) -> Result<DeltaBinConfig> {
    let (light, strong) = text
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("bins {text:?} must look like \"0.5,1.5\"")))?;
    let cfg = DeltaBinConfig {
        light: light
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad bin threshold {light:?}")))?,
        strong: strong
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad bin threshold {strong:?}")))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Scores a table cell straight from direction text, for tests and callers
/// holding raw numbers.
pub fn add_raw_score(
    table: &mut ScoreTable,
    model: &str,
    dataset: &str,
    direction: &str,
    value: f64,
) -> Result<()> {
    table.add_score(model, dataset, parse_direction(direction)?, Score::new(value)?);
    Ok(())
}
