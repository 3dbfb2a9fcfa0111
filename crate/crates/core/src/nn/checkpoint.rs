//! Text checkpoint container.
//!
//! ```text
//! autobrake-checkpoint 1
//! meta <key> <value>           (zero or more)
//! scalar <name> <f64>          (zero or more)
//! network <name> <n_layers>
//! layer <fan_out> <fan_in> <activation>
//! <fan_out*fan_in weights, row-major, space separated>
//! <fan_out biases, space separated>
//! ...
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so loading a saved
//! checkpoint reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Layer, Network};
use crate::error::{Error, Result};

const MAGIC: &str = "autobrake-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub scalars: BTreeMap<String, f64>,
    pub networks: BTreeMap<String, Network>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&Network> {
        self.networks
            .get(name)
            .ok_or_else(|| Error::Shape(format!("checkpoint has no network `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("checkpoint has no scalar `{name}`")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        for (k, v) in &self.scalars {
            writeln!(s, "scalar {k} {v}").unwrap();
        }
        for (name, net) in &self.networks {
            writeln!(s, "network {name} {}", net.layers().len()).unwrap();
            for layer in net.layers() {
                writeln!(s, "layer {} {} {}", layer.fan_out(), layer.fan_in(), layer.activation).unwrap();
                write_row(&mut s, layer.weights.iter());
                write_row(&mut s, layer.bias.iter());
            }
        }
        s
    }

    pub fn from_text(text: &str, source: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, msg: String| Error::Parse {
            file: source.to_path_buf(),
            line,
            msg,
        };
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
        if header != format!("{MAGIC} {VERSION}") {
            return Err(err(1, format!("unsupported header `{header}`")));
        }
        let mut ckpt = Checkpoint::default();
        while let Some((no, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => {
                    ckpt.meta.insert(k.to_string(), v.unwrap_or("").to_string());
                }
                (Some("scalar"), Some(k), Some(v)) => {
                    let x = v.parse::<f64>().map_err(|_| err(no, format!("bad scalar `{v}`")))?;
                    ckpt.scalars.insert(k.to_string(), x);
                }
                (Some("network"), Some(name), Some(n)) => {
                    let n: usize = n.parse().map_err(|_| err(no, format!("bad layer count `{n}`")))?;
                    let mut layers = Vec::with_capacity(n);
                    for _ in 0..n {
                        let (no, head) = lines.next().ok_or_else(|| err(no, "truncated network".into()))?;
                        let f: Vec<&str> = head.split(' ').collect();
                        let [tag, out, inp, act] = f[..] else {
                            return Err(err(no, format!("bad layer header `{head}`")));
                        };
                        if tag != "layer" {
                            return Err(err(no, format!("expected layer header, got `{head}`")));
                        }
                        let out: usize = out.parse().map_err(|_| err(no, "bad fan-out".into()))?;
                        let inp: usize = inp.parse().map_err(|_| err(no, "bad fan-in".into()))?;
                        let activation: Activation = act.parse().map_err(|e: Error| err(no, e.to_string()))?;
                        let (wno, wline) = lines.next().ok_or_else(|| err(no, "missing weights".into()))?;
                        let w = parse_row(wline, out * inp).map_err(|m| err(wno, m))?;
                        let (bno, bline) = lines.next().ok_or_else(|| err(wno, "missing biases".into()))?;
                        let b = parse_row(bline, out).map_err(|m| err(bno, m))?;
                        layers.push(Layer {
                            weights: Array2::from_shape_vec((out, inp), w).expect("length checked"),
                            bias: Array1::from_vec(b),
                            activation,
                        });
                    }
                    let net = Network::from_layers(layers).map_err(|e| err(no, e.to_string()))?;
                    ckpt.networks.insert(name.to_string(), net);
                }
                _ => return Err(err(no, format!("unrecognized line `{line}`"))),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn write_row<'a>(s: &mut String, values: impl Iterator<Item = &'a f64>) {
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s.push('\n');
}

fn parse_row(line: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let values: Vec<f64> = line
        .split_ascii_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != expected {
        return Err(format!("expected {expected} values, found {}", values.len()));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ckpt = Checkpoint::default();
        ckpt.meta.insert("algo".into(), "ppo".into());
        ckpt.scalars.insert("log_std".into(), -0.123_456_789_012_345_67);
        ckpt.networks
            .insert("policy".into(), Network::init(&[7, 16, 16, 1], Activation::Tanh, &mut rng).unwrap());
        ckpt.networks
            .insert("value".into(), Network::init(&[7, 9, 1], Activation::Relu, &mut rng).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        for (a, b) in loaded.networks["policy"].param_slices().zip(ckpt.networks["policy"].param_slices()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let p = Path::new("mem");
        assert!(Checkpoint::from_text("nope 1\n", p).is_err());
        let bad = "autobrake-checkpoint 1\nnetwork n 1\nlayer 2 1 tanh\n1 2 3\n0 0\n";
        assert!(matches!(Checkpoint::from_text(bad, p), Err(Error::Parse { line: 4, .. })));
    }
}
