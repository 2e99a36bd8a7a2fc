//! Plain-text parameter dumps for networks and scalars.
//!
//! ```text
//! wimle-checkpoint 1
//! network critic0
//! spec input=4 width=64 layout=mlp:2 heads=25
//! param input.w 4 64
//! 0.1 -0.25 ...
//! end
//! scalar log_alpha -1.5
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a load after a save is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::numkit::{DenseMatrix, NetLayout, NetSpec, Network};

const MAGIC: &str = "wimle-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
    #[error("no entry named '{0}'")]
    Missing(String),
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub networks: Vec<(String, Network)>,
    pub scalars: Vec<(String, f64)>,
}

fn layout_text(l: &NetLayout) -> String {
    match l {
        NetLayout::Residual { blocks } => format!("residual:{blocks}"),
        NetLayout::Mlp { hidden } => format!("mlp:{hidden}"),
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_network(&mut self, label: impl Into<String>, net: &Network) {
        self.networks.push((label.into(), net.clone()));
    }

    pub fn add_scalar(&mut self, label: impl Into<String>, v: f64) {
        self.scalars.push((label.into(), v));
    }

    pub fn network(&self, label: &str) -> Result<&Network, CheckpointError> {
        self.networks
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, n)| n)
            .ok_or_else(|| CheckpointError::Missing(label.into()))
    }

    pub fn scalar(&self, label: &str) -> Result<f64, CheckpointError> {
        self.scalars
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| *v)
            .ok_or_else(|| CheckpointError::Missing(label.into()))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let w = "writing to a String";
        writeln!(s, "{MAGIC}").expect(w);
        for (label, net) in &self.networks {
            let spec = net.spec();
            let heads: Vec<String> = spec.heads.iter().map(usize::to_string).collect();
            writeln!(s, "network {label}").expect(w);
            writeln!(
                s,
                "spec input={} width={} layout={} heads={}",
                spec.input_dim,
                spec.width,
                layout_text(&spec.layout),
                heads.join(",")
            )
            .expect(w);
            for (name, t) in net.params().iter() {
                writeln!(s, "param {name} {} {}", t.rows(), t.cols()).expect(w);
                let vals: Vec<String> = t.data().iter().map(f64::to_string).collect();
                writeln!(s, "{}", vals.join(" ")).expect(w);
            }
            writeln!(s, "end").expect(w);
        }
        for (label, v) in &self.scalars {
            writeln!(s, "scalar {label} {v}").expect(w);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, msg: &str| CheckpointError::Parse {
            line,
            msg: msg.to_string(),
        };
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(err(1, "missing checkpoint header")),
        }
        let mut out = Checkpoint::new();
        while let Some((ln, line)) = lines.next() {
            let mut words = line.split_whitespace();
            match words.next() {
                None => continue,
                Some("scalar") => {
                    let label = words.next().ok_or_else(|| err(ln, "scalar label"))?;
                    let v = words
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err(ln, "scalar value"))?;
                    out.add_scalar(label, v);
                }
                Some("network") => {
                    let label = words.next().ok_or_else(|| err(ln, "network label"))?.to_string();
                    let (sl, spec_line) = lines.next().ok_or_else(|| err(ln, "missing spec"))?;
                    let spec = parse_spec(spec_line).ok_or_else(|| err(sl, "malformed spec"))?;
                    let mut net = Network::zeros(spec);
                    loop {
                        let (pl, pline) = lines.next().ok_or_else(|| err(ln, "unterminated network"))?;
                        if pline == "end" {
                            break;
                        }
                        let f: Vec<&str> = pline.split_whitespace().collect();
                        if f.len() != 4 || f[0] != "param" {
                            return Err(err(pl, "expected param line"));
                        }
                        let (rows, cols) = match (f[2].parse::<usize>(), f[3].parse::<usize>()) {
                            (Ok(r), Ok(c)) => (r, c),
                            _ => return Err(err(pl, "bad shape")),
                        };
                        let (vl, vline) = lines.next().ok_or_else(|| err(pl, "missing values"))?;
                        let vals: Vec<f64> = vline
                            .split_whitespace()
                            .map(str::parse)
                            .collect::<Result<_, _>>()
                            .map_err(|_| err(vl, "bad value"))?;
                        let idx = net
                            .params()
                            .index_of(f[1])
                            .ok_or_else(|| err(pl, "parameter not in architecture"))?;
                        let m = DenseMatrix::from_vec(rows, cols, vals).map_err(|_| err(vl, "value count"))?;
                        if net.params().get(idx).shape() != m.shape() {
                            return Err(err(pl, "shape differs from architecture"));
                        }
                        *net.params_mut().get_mut(idx) = m;
                    }
                    out.networks.push((label, net));
                }
                Some(_) => return Err(err(ln, "unexpected line")),
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.render()).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn parse_spec(line: &str) -> Option<NetSpec> {
    let mut f = line.split_whitespace();
    if f.next()? != "spec" {
        return None;
    }
    let mut get = |key: &str| f.next()?.strip_prefix(key)?.strip_prefix('=').map(str::to_string);
    let input_dim = get("input")?.parse().ok()?;
    let width = get("width")?.parse().ok()?;
    let layout = get("layout")?;
    let heads_text = get("heads")?;
    let (kind, n) = layout.split_once(':')?;
    let n = n.parse().ok()?;
    let layout = match kind {
        "residual" => NetLayout::Residual { blocks: n },
        "mlp" => NetLayout::Mlp { hidden: n },
        _ => return None,
    };
    let heads = heads_text
        .split(',')
        .map(|h| h.parse().ok())
        .collect::<Option<Vec<usize>>>()?;
    Some(NetSpec {
        input_dim,
        width,
        layout,
        heads,
    })
}
