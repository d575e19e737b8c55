//! CSV ingestion and export.
//!
//! * `counts.csv`: `location_id,week,count` (an empty or `NA` count marks a
//!   missing cell)
//! * `locations.csv`: `location_id,lon,lat`
//! * `population.csv`: `location_id,population` (static) or
//!   `location_id,week,population` (time-varying)

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde_json::json;

use super::{Dataset, Location};
use crate::error::{Error, Result};
use crate::forecast::ForecastResult;

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn header(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let h = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, format!("unreadable header: {e}")))?;
    Ok(h.iter()
        .map(|s| s.trim().trim_start_matches('\u{feff}').to_string())
        .collect())
}

fn expect_header(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got != want {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Iterates records with their 1-based line numbers.
fn records(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = rec.get(idx).map(str::trim).unwrap_or("");
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {name} `{raw}`")))
}

fn read_locations(path: &Path) -> Result<Vec<Location>> {
    let mut rdr = open_csv(path)?;
    let h = header(path, &mut rdr)?;
    expect_header(path, &h, &["location_id", "lon", "lat"])?;
    let mut out = Vec::new();
    for (line, rec) in records(path, &mut rdr)? {
        let id = rec.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty location_id"));
        }
        let lon: f64 = field(path, line, &rec, 1, "lon")?;
        let lat: f64 = field(path, line, &rec, 2, "lat")?;
        if !(lon.is_finite() && lat.is_finite()) {
            return Err(parse_err(path, line, "non-finite coordinate"));
        }
        if out.iter().any(|l: &Location| l.id == id) {
            return Err(parse_err(path, line, format!("duplicate location_id `{id}`")));
        }
        out.push(Location { id, lon, lat });
    }
    Ok(out)
}

enum Population {
    Static(HashMap<String, f64>),
    Weekly(HashMap<String, BTreeMap<i64, f64>>),
}

fn read_population(path: &Path) -> Result<Population> {
    let mut rdr = open_csv(path)?;
    let h = header(path, &mut rdr)?;
    let weekly = match h.len() {
        2 => {
            expect_header(path, &h, &["location_id", "population"])?;
            false
        }
        _ => {
            expect_header(path, &h, &["location_id", "week", "population"])?;
            true
        }
    };
    let mut stat = HashMap::new();
    let mut by_week: HashMap<String, BTreeMap<i64, f64>> = HashMap::new();
    for (line, rec) in records(path, &mut rdr)? {
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let pop_idx = if weekly { 2 } else { 1 };
        let pop: f64 = field(path, line, &rec, pop_idx, "population")?;
        if !(pop > 0.0 && pop.is_finite()) {
            return Err(parse_err(path, line, format!("population must be positive, got {pop}")));
        }
        if weekly {
            let week: i64 = field(path, line, &rec, 1, "week")?;
            if by_week.entry(id.clone()).or_default().insert(week, pop).is_some() {
                return Err(parse_err(
                    path,
                    line,
                    format!("duplicate population for `{id}` week {week}"),
                ));
            }
        } else if stat.insert(id.clone(), pop).is_some() {
            return Err(parse_err(path, line, format!("duplicate population for `{id}`")));
        }
    }
    Ok(if weekly {
        Population::Weekly(by_week)
    } else {
        Population::Static(stat)
    })
}

/// Loads and joins the three panel files.
///
/// Weeks span the full range seen in the counts file; (location, week) pairs
/// without a count row are missing cells. Static populations are broadcast
/// across weeks; weekly populations are carried forward (then backward) over
/// weeks they do not list.
pub fn load_dataset(counts_path: &Path, locations_path: &Path, population_path: &Path) -> Result<Dataset> {
    let locations = read_locations(locations_path)?;
    let index: HashMap<&str, usize> = locations.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();

    let mut rdr = open_csv(counts_path)?;
    let h = header(counts_path, &mut rdr)?;
    expect_header(counts_path, &h, &["location_id", "week", "count"])?;
    let mut unknown = BTreeSet::new();
    let mut rows = Vec::new();
    for (line, rec) in records(counts_path, &mut rdr)? {
        let id = rec.get(0).unwrap_or("").trim();
        let week: i64 = field(counts_path, line, &rec, 1, "week")?;
        let raw = rec.get(2).map(str::trim).unwrap_or("");
        let count = if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            None
        } else {
            let v: i64 = raw
                .parse()
                .map_err(|_| parse_err(counts_path, line, format!("invalid count `{raw}`")))?;
            if v < 0 {
                return Err(parse_err(counts_path, line, format!("negative count {v}")));
            }
            Some(v as u64)
        };
        match index.get(id) {
            Some(&i) => rows.push((line, i, week, count)),
            None => {
                unknown.insert(id.to_string());
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::domain(format!(
            "{}: unknown location ids: {}",
            counts_path.display(),
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let (Some(first), Some(last)) = (rows.iter().map(|r| r.2).min(), rows.iter().map(|r| r.2).max()) else {
        return Err(parse_err(counts_path, 1, "no count rows"));
    };
    let weeks: Vec<i64> = (first..=last).collect();
    let nw = weeks.len();
    let mut counts = vec![None; locations.len() * nw];
    let mut seen = vec![false; counts.len()];
    for (line, i, week, count) in rows {
        let c = i * nw + (week - first) as usize;
        if seen[c] {
            return Err(parse_err(
                counts_path,
                line,
                format!("duplicate row for `{}` week {week}", locations[i].id),
            ));
        }
        seen[c] = true;
        counts[c] = count;
    }

    let population = read_population(population_path)?;
    let mut pops = vec![0.0; counts.len()];
    for (i, loc) in locations.iter().enumerate() {
        let missing = || {
            Error::domain(format!(
                "{}: no population for location `{}`",
                population_path.display(),
                loc.id
            ))
        };
        match &population {
            Population::Static(map) => {
                let p = *map.get(&loc.id).ok_or_else(missing)?;
                pops[i * nw..(i + 1) * nw].fill(p);
            }
            Population::Weekly(map) => {
                let series = map.get(&loc.id).ok_or_else(missing)?;
                for (j, w) in weeks.iter().enumerate() {
                    let p = series
                        .range(..=*w)
                        .next_back()
                        .or_else(|| series.range(*w..).next())
                        .map(|(_, p)| *p)
                        .ok_or_else(missing)?;
                    pops[i * nw + j] = p;
                }
            }
        }
    }
    Dataset::new(locations, weeks, counts, pops)
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(f))
}

/// Writes `counts.csv`, `locations.csv` and `population.csv` into `dir`.
///
/// Populations are written in the static schema when they do not vary over
/// weeks, otherwise in the weekly schema. Missing cells are written with an
/// empty count so that the week range survives a reload.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = create(&dir.join("locations.csv"))?;
    w.write_record(["location_id", "lon", "lat"])?;
    for l in data.locations() {
        w.write_record([l.id.clone(), format!("{}", l.lon), format!("{}", l.lat)])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let mut w = create(&dir.join("counts.csv"))?;
    w.write_record(["location_id", "week", "count"])?;
    for c in 0..data.n_cells() {
        let (i, j) = data.cell_position(c);
        let count = data.count(c).map(|y| y.to_string()).unwrap_or_default();
        w.write_record([data.locations()[i].id.clone(), data.weeks()[j].to_string(), count])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let nw = data.n_weeks();
    let is_static = (0..data.n_locations()).all(|i| {
        let row = &data.populations()[i * nw..(i + 1) * nw];
        row.iter().all(|&p| p == row[0])
    });
    let mut w = create(&dir.join("population.csv"))?;
    if is_static {
        w.write_record(["location_id", "population"])?;
        for (i, l) in data.locations().iter().enumerate() {
            w.write_record([l.id.clone(), format!("{}", data.populations()[i * nw])])?;
        }
    } else {
        w.write_record(["location_id", "week", "population"])?;
        for c in 0..data.n_cells() {
            let (i, j) = data.cell_position(c);
            w.write_record([
                data.locations()[i].id.clone(),
                data.weeks()[j].to_string(),
                format!("{}", data.population(c)),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    GeoJson,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "geojson" => Ok(ExportFormat::GeoJson),
            other => Err(Error::domain(format!(
                "unknown export format `{other}` (expected csv or geojson)"
            ))),
        }
    }
}

/// Writes per-(location, week) predictive quantiles of `result`.
///
/// CSV columns are `location_id,week,q02.5,q50,q97.5,mean`; GeoJSON emits one
/// point feature per location and week carrying the same properties.
pub fn export_forecast<W: Write>(
    result: &ForecastResult,
    locations: &[Location],
    format: ExportFormat,
    out: W,
) -> Result<()> {
    if result.cells.is_empty() {
        return Err(Error::domain("forecast has no cells"));
    }
    let rows = result.summarize();
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out);
            w.write_record(["location_id", "week", "q02.5", "q50", "q97.5", "mean"])?;
            for r in &rows {
                let id = &locations
                    .get(r.location)
                    .ok_or_else(|| Error::domain("forecast refers to an unknown location"))?
                    .id;
                w.write_record([
                    id.clone(),
                    r.week.to_string(),
                    format!("{}", r.q025),
                    format!("{}", r.q50),
                    format!("{}", r.q975),
                    format!("{}", r.mean),
                ])?;
            }
            w.flush().map_err(|e| Error::io("<forecast>", e))?;
        }
        ExportFormat::GeoJson => {
            let mut features = Vec::with_capacity(rows.len());
            for r in &rows {
                let loc = locations
                    .get(r.location)
                    .ok_or_else(|| Error::domain("forecast refers to an unknown location"))?;
                features.push(json!({
                    "type": "Feature",
                    "geometry": { "type": "Point", "coordinates": [loc.lon, loc.lat] },
                    "properties": {
                        "location_id": loc.id,
                        "week": r.week,
                        "q02.5": r.q025,
                        "q50": r.q50,
                        "q97.5": r.q975,
                        "mean": r.mean,
                    }
                }));
            }
            let doc = json!({ "type": "FeatureCollection", "features": features });
            serde_json::to_writer_pretty(out, &doc)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::ForecastCell;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_well_formed_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(
            dir.path(),
            "c.csv",
            "location_id,week,count\nA,1,3\nA,2,0\nA,3,5\nB,1,1\nB,2,2\nB,3,4",
        );
        let l = write(dir.path(), "l.csv", "location_id,lon,lat\nA,-1.5,52.6\nB,-0.9,52.9\n");
        let p = write(dir.path(), "p.csv", "location_id,population\nA,1000\nB,2500\n");
        let d = load_dataset(&c, &l, &p).unwrap();
        assert_eq!(d.n_cells(), 6);
        assert_eq!(d.count(d.cell(1, 2)), Some(4));
        assert_eq!(d.population(d.cell(1, 0)), 2500.0);
        assert_eq!(d.population(d.cell(1, 2)), 2500.0);
    }

    #[test]
    fn unknown_ids_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(dir.path(), "c.csv", "location_id,week,count\nA,1,3\nX99,1,2\n");
        let l = write(dir.path(), "l.csv", "location_id,lon,lat\nA,0,0\n");
        let p = write(dir.path(), "p.csv", "location_id,population\nA,10\n");
        let err = load_dataset(&c, &l, &p).unwrap_err().to_string();
        assert!(err.contains("X99"), "{err}");
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "l.csv", "location_id,lon,lat\nA,0,0\n");
        let p = write(dir.path(), "p.csv", "location_id,population\nA,10\n");
        let c = write(dir.path(), "c.csv", "location_id,week,count\nA,1,3\nA,2,-1\n");
        match load_dataset(&c, &l, &p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("negative"));
            }
            other => panic!("{other:?}"),
        }
        let bad = write(dir.path(), "bad.csv", "id,week,count\nA,1,3\n");
        assert!(matches!(load_dataset(&bad, &l, &p), Err(Error::Parse { line: 1, .. })));
        let p0 = write(dir.path(), "p0.csv", "location_id,population\nA,0\n");
        assert!(load_dataset(&c, &l, &p0).is_err());
    }

    #[test]
    fn gaps_become_missing_and_weekly_population_carries() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(dir.path(), "c.csv", "location_id,week,count\nA,1,3\nA,4,1\nA,2,NA\n");
        let l = write(dir.path(), "l.csv", "location_id,lon,lat\nA,0,0\n");
        let p = write(dir.path(), "p.csv", "location_id,week,population\nA,2,100\nA,4,200\n");
        let d = load_dataset(&c, &l, &p).unwrap();
        assert_eq!(d.weeks(), &[1, 2, 3, 4]);
        assert_eq!(d.counts(), &[Some(3), None, None, Some(1)]);
        assert_eq!(d.populations(), &[100.0, 100.0, 100.0, 200.0]);
    }

    #[test]
    fn write_load_round_trip() {
        let d = crate::data::tests::toy(3, 5);
        let mut counts = d.counts().to_vec();
        counts[4] = None;
        let d = Dataset::new(
            d.locations().to_vec(),
            d.weeks().to_vec(),
            counts,
            d.populations().to_vec(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(
            &dir.path().join("counts.csv"),
            &dir.path().join("locations.csv"),
            &dir.path().join("population.csv"),
        )
        .unwrap();
        assert_eq!(back, d);
    }

    fn one_cell(samples: Vec<f64>) -> ForecastResult {
        ForecastResult {
            cells: vec![ForecastCell {
                location: 0,
                week: 105,
                counts: samples.clone(),
                means: samples,
            }],
        }
    }

    #[test]
    fn constant_forecast_exports() {
        let locs = vec![Location {
            id: "A".into(),
            lon: -1.25,
            lat: 52.5,
        }];
        let res = one_cell(vec![7.0; 20]);
        let mut buf = Vec::new();
        export_forecast(&res, &locs, ExportFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "location_id,week,q02.5,q50,q97.5,mean\nA,105,7,7,7,7\n");

        let mut buf = Vec::new();
        export_forecast(&res, &locs, ExportFormat::GeoJson, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let f = &v["features"][0];
        assert_eq!(f["properties"]["q50"], 7.0);
        assert_eq!(f["geometry"]["coordinates"][0], -1.25);
        assert_eq!(f["geometry"]["coordinates"][1], 52.5);

        assert!("shapefile".parse::<ExportFormat>().is_err());
        assert!(export_forecast(&ForecastResult { cells: vec![] }, &locs, ExportFormat::Csv, Vec::new()).is_err());
    }

    #[test]
    fn exported_quantiles_match_shared_routine() {
        let samples: Vec<f64> = (0..137).map(|i| ((i * 37) % 101) as f64 * 0.5).collect();
        let res = one_cell(samples.clone());
        let locs = vec![Location {
            id: "A".into(),
            lon: 0.0,
            lat: 0.0,
        }];
        let mut buf = Vec::new();
        export_forecast(&res, &locs, ExportFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row: Vec<f64> = text
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .skip(2)
            .map(|v| v.parse().unwrap())
            .collect();
        let q = crate::stats::quantiles(&samples, &[0.025, 0.5, 0.975]);
        for k in 0..3 {
            assert!((row[k] - q[k]).abs() <= 1e-12);
        }
    }
}
