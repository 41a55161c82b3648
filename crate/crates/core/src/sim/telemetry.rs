//! Telemetry rows and their CSV encoding.

use serde::Serialize;

/// Per-unit columns.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnitRow {
    pub position: [f64; 3],
    /// Roll, pitch, yaw of the unit's {CoG}.
    pub attitude: [f64; 3],
    pub target: [f64; 3],
    pub thrust: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub t: f64,
    pub state: String,
    pub bodies: usize,
    pub units: [UnitRow; 2],
    pub weight: f64,
    pub s_unit: f64,
    pub s_assem: f64,
    pub scale: f64,
    /// Tracking error of the controlled point (target minus true).
    pub error: [f64; 3],
    /// Requested torque of the first controller.
    pub torque: [f64; 3],
}

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = ["t", "state", "bodies"].iter().map(|s| s.to_string()).collect();
    for u in 0..2 {
        for k in ["x", "y", "z", "roll", "pitch", "yaw", "tx", "ty", "tz", "l1", "l2", "l3", "l4"] {
            h.push(format!("u{u}_{k}"));
        }
    }
    for k in ["w", "s_unit", "s_assem", "scale", "ex", "ey", "ez", "tau_x", "tau_y", "tau_z"] {
        h.push(k.to_string());
    }
    h
}

fn f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

impl Row {
    pub fn record(&self) -> Vec<String> {
        let mut r = vec![format!("{:.3}", self.t), self.state.clone(), self.bodies.to_string()];
        for u in &self.units {
            r.extend(u.position.iter().chain(&u.attitude).chain(&u.target).chain(&u.thrust).map(|v| f(*v)));
        }
        r.extend([self.weight, self.s_unit, self.s_assem, self.scale].iter().map(|v| f(*v)));
        r.extend(self.error.iter().chain(&self.torque).map(|v| f(*v)));
        r
    }
}

/// RFC 4180 CSV with a header row.
pub fn to_csv(rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header()).expect("in-memory write");
    for row in rows {
        w.write_record(row.record()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii output")
}

/// Column-major view of a parsed telemetry file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table, String> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| format!("row {}: {e}", line + 2))?;
            for (c, v) in rec.iter().enumerate() {
                columns[c].push(v.parse::<f64>().unwrap_or(f64::NAN));
            }
        }
        Ok(Table { header, columns })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }
}
