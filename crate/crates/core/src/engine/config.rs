//! Flat `key = value` configuration text. `#` starts a comment; unknown
//! keys are errors. Every key is also settable one at a time via
//! [`SimConfig::set`], which the command line uses for overrides.

use super::{EngineError, Mode, SimConfig};
use crate::dynamics::IdmParams;
use std::fmt::Write as _;
use std::str::FromStr;

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, EngineError> {
    value.trim().parse().map_err(|_| EngineError::Config(format!("bad value {value:?} for `{key}`")))
}

fn flag(key: &str, value: &str) -> Result<bool, EngineError> {
    match value.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(EngineError::Config(format!("bad flag {value:?} for `{key}`"))),
    }
}

fn set_idm(p: &mut IdmParams, field: &str, key: &str, value: &str) -> Result<(), EngineError> {
    let slot = match field {
        "a" => &mut p.a,
        "b" => &mut p.b,
        "delta" => &mut p.delta,
        "s0" => &mut p.s0,
        "headway" => &mut p.headway,
        "emergency_factor" => &mut p.emergency_factor,
        _ => return Err(EngineError::Config(format!("unknown key `{key}`"))),
    };
    *slot = num(key, value)?;
    Ok(())
}

/// Every key accepted by [`SimConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "dt", "start", "end", "shards", "method", "epsilon", "seed", "mode", "signal_cycle", "partition_window",
    "check_invariants", "workers", "lane_change.x0", "gap.g_a", "gap.g_b", "gap.alpha_a", "gap.alpha_b",
    "gap.alpha_i", "gap.sigma_a", "gap.sigma_b", "car.a", "car.b", "car.delta", "car.s0", "car.headway",
    "car.emergency_factor", "truck.a", "truck.b", "truck.delta", "truck.s0", "truck.headway",
    "truck.emergency_factor",
];

impl SimConfig {
    /// Sets one field by key. `partition_window` takes `from:to` or `all`;
    /// `workers` takes a count or `auto`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), EngineError> {
        let v = value.trim();
        match key.trim() {
            "dt" => self.dt = num(key, v)?,
            "start" => self.start_s = num(key, v)?,
            "end" => self.end_s = num(key, v)?,
            "shards" => self.shards = num(key, v)?,
            "method" => self.method = v.parse::<crate::partitioning::PartitionMethod>().map_err(|e| EngineError::Config(e.to_string()))?,
            "epsilon" => self.epsilon = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "mode" => self.mode = v.parse::<Mode>().map_err(EngineError::Config)?,
            "signal_cycle" => self.signal_cycle_s = num(key, v)?,
            "partition_window" => {
                self.partition_window = if v == "all" {
                    None
                } else {
                    let (a, b) = v
                        .split_once(':')
                        .ok_or_else(|| EngineError::Config(format!("`{key}` takes from:to, got {v:?}")))?;
                    Some((num(key, a)?, num(key, b)?))
                }
            }
            "check_invariants" => self.check_invariants = flag(key, v)?,
            "workers" => self.workers = if v == "auto" { None } else { Some(num(key, v)?) },
            "lane_change.x0" => self.lane_change.x0 = num(key, v)?,
            "gap.g_a" => self.gap.g_a = num(key, v)?,
            "gap.g_b" => self.gap.g_b = num(key, v)?,
            "gap.alpha_a" => self.gap.alpha_a = num(key, v)?,
            "gap.alpha_b" => self.gap.alpha_b = num(key, v)?,
            "gap.alpha_i" => self.gap.alpha_i = num(key, v)?,
            "gap.sigma_a" => self.gap.sigma_a = num(key, v)?,
            "gap.sigma_b" => self.gap.sigma_b = num(key, v)?,
            k => match k.split_once('.') {
                Some(("car", f)) => set_idm(&mut self.car, f, k, v)?,
                Some(("truck", f)) => set_idm(&mut self.truck, f, k, v)?,
                _ => return Err(EngineError::Config(format!("unknown key `{k}`"))),
            },
        }
        Ok(())
    }

    /// Parses a whole file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), EngineError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EngineError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| EngineError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Writes every key; parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            Mode::Strict => "strict",
            Mode::Fast => "fast",
        };
        let _ = writeln!(s, "dt = {}\nstart = {}\nend = {}", self.dt, self.start_s, self.end_s);
        let _ = writeln!(s, "shards = {}\nmethod = {}\nepsilon = {}", self.shards, self.method, self.epsilon);
        let _ = writeln!(s, "seed = {}\nmode = {mode}\nsignal_cycle = {}", self.seed, self.signal_cycle_s);
        match self.partition_window {
            Some((a, b)) => _ = writeln!(s, "partition_window = {a}:{b}"),
            None => _ = writeln!(s, "partition_window = all"),
        }
        let _ = writeln!(s, "check_invariants = {}", self.check_invariants);
        match self.workers {
            Some(w) => _ = writeln!(s, "workers = {w}"),
            None => _ = writeln!(s, "workers = auto"),
        }
        let _ = writeln!(s, "lane_change.x0 = {}", self.lane_change.x0);
        let g = &self.gap;
        for (k, v) in [
            ("g_a", g.g_a),
            ("g_b", g.g_b),
            ("alpha_a", g.alpha_a),
            ("alpha_b", g.alpha_b),
            ("alpha_i", g.alpha_i),
            ("sigma_a", g.sigma_a),
            ("sigma_b", g.sigma_b),
        ] {
            let _ = writeln!(s, "gap.{k} = {v}");
        }
        for (name, p) in [("car", &self.car), ("truck", &self.truck)] {
            for (k, v) in [
                ("a", p.a),
                ("b", p.b),
                ("delta", p.delta),
                ("s0", p.s0),
                ("headway", p.headway),
                ("emergency_factor", p.emergency_factor),
            ] {
                let _ = writeln!(s, "{name}.{k} = {v}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitioning::PartitionMethod;

    #[test]
    fn text_round_trip() {
        let mut cfg = SimConfig::default();
        cfg.set("shards", "4").unwrap();
        cfg.set("method", "unbalanced").unwrap();
        cfg.set("mode", "fast").unwrap();
        cfg.set("partition_window", "0:900").unwrap();
        cfg.set("truck.s0", "4.5").unwrap();
        cfg.set("workers", "3").unwrap();
        assert_eq!(cfg.method, PartitionMethod::Unbalanced);
        assert_eq!(SimConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_settable() {
        let text = SimConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, CONFIG_KEYS);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = SimConfig::parse("# run\n dt = 0.25 # finer\n\nend=60\n").unwrap();
        assert_eq!((cfg.dt, cfg.end_s), (0.25, 60.0));
        assert!(SimConfig::parse("bogus = 1").is_err());
        assert!(SimConfig::parse("dt 1").is_err());
        assert!(SimConfig::parse("dt = fast").is_err());
        assert!(SimConfig::parse("car.wheels = 4").is_err());
    }
}
