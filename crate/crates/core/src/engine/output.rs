use super::{StepMetrics, TripRecord};
use std::io::{self, BufRead, Write};

pub const RESULTS_HEADER: &str = "id,depart,enter,arrive,travel_time,distance";
pub const METRICS_HEADER: &str =
    "step,time_s,waiting,live,finished,copies,deletes,handoffs,compute_ns,transfer_ns,sync_ns";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per trip. Unknown times are empty fields; floats use the
/// shortest text that parses back to the same value.
pub fn write_results<'r>(mut w: impl Write, records: impl IntoIterator<Item = &'r TripRecord>) -> io::Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in records {
        write_result_row(&mut w, r)?;
    }
    Ok(())
}

/// A single results line without the header, for streaming output.
pub fn write_result_row(mut w: impl Write, r: &TripRecord) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{}",
        r.trip,
        r.depart_s,
        opt(r.enter_network_s),
        opt(r.arrive_s),
        opt(r.travel_time_s),
        r.distance_m
    )
}

/// Reads a results file back. Edge entry times are not stored.
pub fn parse_results(r: impl BufRead) -> io::Result<Vec<TripRecord>> {
    let bad = |line: usize, msg: &str| io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {msg}"));
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != RESULTS_HEADER {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(i + 1, "expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let optnum = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let arrive_s = optnum(f[3])?;
        out.push(TripRecord {
            trip: f[0].parse().map_err(|_| bad(i + 1, "bad id"))?,
            depart_s: num(f[1])?,
            enter_network_s: optnum(f[2])?,
            arrive_s,
            travel_time_s: optnum(f[4])?,
            distance_m: num(f[5])?,
            edge_entries: Vec::new(),
            complete: arrive_s.is_some(),
        });
    }
    Ok(out)
}

pub fn write_metrics<'m>(mut w: impl Write, steps: impl IntoIterator<Item = &'m StepMetrics>) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.step,
            m.time_s,
            m.waiting,
            m.live,
            m.finished,
            m.copies,
            m.deletes,
            m.handoffs,
            m.compute_ns,
            m.transfer_ns,
            m.sync_ns
        )?;
    }
    Ok(())
}
