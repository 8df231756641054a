//! CSV reading and writing in the dataset column schema.
//!
//! Header is required, column order is free. Recognized columns: `unit_id,
//! stratum, psu, cycle, w1, in_s2, w2, y, x2, x2_oracle`, plus any number of
//! `x1_*` and `z_*` columns kept in header order. Lines starting with `#`
//! are comments.

use std::io::{Read, Write};

use super::{DataError, DesignType, Phase2StrataRule, Row, TwoPhaseDataset};

/// Design metadata that the CSV itself does not carry.
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Forced design type; inferred from the `cycle` column when absent.
    pub design_type: Option<DesignType>,
    pub fp_size: Option<f64>,
    pub cycles_total: Option<usize>,
    pub cycles_with_x2: Option<usize>,
}

struct Layout {
    unit_id: usize,
    stratum: usize,
    psu: usize,
    cycle: Option<usize>,
    w1: usize,
    in_s2: usize,
    w2: Option<usize>,
    y: usize,
    x2: Option<usize>,
    x2_oracle: Option<usize>,
    x1: Vec<usize>,
    z: Vec<usize>,
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

fn number(field: &str, name: &str, line: u64) -> Result<f64, DataError> {
    field.parse::<f64>().map_err(|_| DataError::Csv {
        line,
        message: format!("column `{name}`: `{field}` is not a number"),
    })
}

fn optional_number(field: &str, name: &str, line: u64) -> Result<Option<f64>, DataError> {
    if is_missing(field) {
        Ok(None)
    } else {
        number(field, name, line).map(Some)
    }
}

pub fn read_dataset<R: Read>(reader: R, opts: &CsvOptions) -> Result<TwoPhaseDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Csv { line: 1, message: e.to_string() })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let layout = Layout {
        unit_id: need("unit_id")?,
        stratum: need("stratum")?,
        psu: need("psu")?,
        cycle: find("cycle"),
        w1: need("w1")?,
        in_s2: need("in_s2")?,
        w2: find("w2"),
        y: need("y")?,
        x2: find("x2"),
        x2_oracle: find("x2_oracle"),
        x1: (0..headers.len()).filter(|&i| headers[i].starts_with("x1_")).collect(),
        z: (0..headers.len()).filter(|&i| headers[i].starts_with("z_")).collect(),
    };
    let x1_names: Vec<String> = layout.x1.iter().map(|&i| headers[i].to_string()).collect();
    let z_names: Vec<String> = layout.z.iter().map(|&i| headers[i].to_string()).collect();

    let mut rows = Vec::new();
    let mut oracle = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let in_s2 = match &rec[layout.in_s2] {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => {
                return Err(DataError::Csv { line, message: format!("in_s2 must be 0 or 1, got `{other}`") })
            }
        };
        let cycle = layout.cycle.map(|i| rec[i].to_string()).filter(|c| !c.is_empty());
        let w2 = match layout.w2 {
            Some(i) => optional_number(&rec[i], "w2", line)?,
            None => None,
        };
        let x2 = match layout.x2 {
            Some(i) => optional_number(&rec[i], "x2", line)?,
            None => None,
        };
        if let Some(i) = layout.x2_oracle {
            oracle.push(optional_number(&rec[i], "x2_oracle", line)?);
        }
        let x1 = layout
            .x1
            .iter()
            .map(|&i| number(&rec[i], &headers[i], line))
            .collect::<Result<Vec<_>, _>>()?;
        let z = layout
            .z
            .iter()
            .map(|&i| number(&rec[i], &headers[i], line))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(Row {
            unit_id: rec[layout.unit_id].to_string(),
            stratum: rec[layout.stratum].to_string(),
            psu: rec[layout.psu].to_string(),
            cycle,
            w1: number(&rec[layout.w1], "w1", line)?,
            in_s2,
            w2,
            y: number(&rec[layout.y], "y", line)?,
            x1,
            x2,
            z,
        });
    }
    let design_type = opts.design_type.unwrap_or(if rows.iter().any(|r| r.cycle.is_some()) {
        DesignType::TypeII
    } else {
        DesignType::TypeI
    });
    let oracle_x2 = if layout.x2_oracle.is_some() {
        oracle.into_iter().collect::<Option<Vec<f64>>>()
    } else {
        None
    };
    Ok(TwoPhaseDataset {
        rows,
        design_type,
        phase2_strata_rule: match design_type {
            DesignType::TypeI => Phase2StrataRule::Phase1PsuAsStratum,
            DesignType::TypeII => Phase2StrataRule::CycleSubset,
        },
        fp_size: opts.fp_size,
        cycles_total: opts.cycles_total,
        cycles_with_x2: opts.cycles_with_x2,
        x2_cycles: None,
        x1_names,
        z_names,
        oracle_x2,
    })
}

/// Write the dataset in the same schema. Numbers use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_dataset<W: Write>(ds: &TwoPhaseDataset, writer: W) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> =
        ["unit_id", "stratum", "psu", "cycle", "w1", "in_s2", "w2", "y"].iter().map(|s| s.to_string()).collect();
    header.extend(ds.x1_names.iter().cloned());
    header.extend(ds.z_names.iter().cloned());
    header.push("x2".into());
    if ds.oracle_x2.is_some() {
        header.push("x2_oracle".into());
    }
    w.write_record(&header).map_err(io)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (i, r) in ds.rows.iter().enumerate() {
        let mut rec = vec![
            r.unit_id.clone(),
            r.stratum.clone(),
            r.psu.clone(),
            r.cycle.clone().unwrap_or_default(),
            r.w1.to_string(),
            if r.in_s2 { "1" } else { "0" }.to_string(),
            opt(r.w2),
            r.y.to_string(),
        ];
        rec.extend(r.x1.iter().map(f64::to_string));
        rec.extend(r.z.iter().map(f64::to_string));
        rec.push(opt(r.x2));
        if let Some(o) = &ds.oracle_x2 {
            rec.push(o[i].to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# comment line
psu,stratum,unit_id,w1,in_s2,w2,y,x1_1,z_1,x2,cycle
1,A,u1,10,1,2,1,0.5,0.1,1.25,
2,A,u2,12,0,,0,0.25,0.2,NA,
1,B,u3,8,1,2,0,-0.5,0.3,0.75,
2,B,u4,9,0,,1,1.0,0.4,,
";

    #[test]
    fn reads_order_free_header() {
        let ds = read_dataset(SAMPLE.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(ds.design_type, DesignType::TypeI);
        assert_eq!(ds.rows.len(), 4);
        assert_eq!(ds.x1_names, vec!["x1_1"]);
        assert_eq!(ds.rows[0].x2, Some(1.25));
        assert_eq!(ds.rows[1].x2, None);
        assert_eq!(ds.rows[3].x2, None);
        assert!(super::super::validate(&ds).is_accepted());
    }

    #[test]
    fn bad_number_is_an_error_not_missing() {
        let bad = SAMPLE.replace("1.25", "abc");
        let err = read_dataset(bad.as_bytes(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::Csv { .. }), "{err:?}");
    }

    #[test]
    fn missing_column_is_named() {
        let bad = SAMPLE.replace("w1,", "wx,");
        assert_eq!(
            read_dataset(bad.as_bytes(), &CsvOptions::default()).unwrap_err(),
            DataError::MissingColumn("w1".into())
        );
    }

    #[test]
    fn write_then_read_is_identity() {
        let mut ds = read_dataset(SAMPLE.as_bytes(), &CsvOptions::default()).unwrap();
        ds.rows[0].w1 = 1.0 / 3.0;
        ds.oracle_x2 = Some(vec![1.25, 0.1 + 0.2, 0.75, -2.0]);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(back, ds);
    }
}
