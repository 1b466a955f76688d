//! Genotype text grammar:
//!
//! ```text
//! node:<id>{,<id>}*;skip:<bits>;layer:<id>
//! ```
//!
//! Node ids are the lowercase hyphenated aggregator names; skip bit i governs
//! layer i (1-based), left to right, `1` keeping the layer for the layer
//! aggregator. Ablated genotypes (no layer aggregator) omit the trailing
//! `;layer:<id>` clause and must have all-zero skips. Examples:
//!
//! ```text
//! node:gcn,gat,sage-mean;skip:10;layer:concat
//! node:gcn;skip:                       (K = 1, ablated)
//! ```

use crate::gnn::{LayerAggregatorKind, NodeAggregatorKind};

use super::{Genotype, SpaceError};

pub fn encode(g: &Genotype) -> String {
    let mut out = String::from("node:");
    for (i, k) in g.node_aggs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(k.id());
    }
    out.push_str(";skip:");
    for &bit in &g.skips {
        out.push(if bit { '1' } else { '0' });
    }
    if let Some(layer) = g.layer_agg {
        out.push_str(";layer:");
        out.push_str(layer.id());
    }
    out
}

/// Cursor over the input tracking byte position for diagnostics.
struct Scanner<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn err(&self, msg: impl Into<String>) -> SpaceError {
        SpaceError::Parse {
            position: self.pos,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, literal: &str) -> Result<(), SpaceError> {
        if self.s[self.pos..].starts_with(literal) {
            self.pos += literal.len();
            Ok(())
        } else {
            Err(self.err(format!("expected {literal:?}")))
        }
    }

    /// Consumes up to the next `;` or end of input.
    fn take_section(&mut self) -> &'a str {
        let rest = &self.s[self.pos..];
        let end = rest.find(';').unwrap_or(rest.len());
        let out = &rest[..end];
        self.pos += end;
        out
    }

    fn at_end(&self) -> bool {
        self.pos == self.s.len()
    }
}

pub fn decode(s: &str) -> Result<Genotype, SpaceError> {
    let mut sc = Scanner { s, pos: 0 };

    sc.expect("node:")?;
    let node_section = sc.take_section();
    if node_section.is_empty() {
        return Err(SpaceError::Parse {
            position: sc.pos,
            msg: "expected at least one node aggregator id".into(),
        });
    }
    let mut node_aggs = Vec::new();
    let mut at = sc.pos - node_section.len();
    for id in node_section.split(',') {
        match NodeAggregatorKind::from_id(id) {
            Some(k) => node_aggs.push(k),
            None => {
                return Err(SpaceError::Parse {
                    position: at,
                    msg: format!("unknown node aggregator {id:?}"),
                })
            }
        }
        at += id.len() + 1;
    }

    sc.expect(";")?;
    sc.expect("skip:")?;
    let bits_at = sc.pos;
    let bits_section = sc.take_section();
    let mut skips = Vec::with_capacity(bits_section.len());
    for (i, ch) in bits_section.char_indices() {
        match ch {
            '0' => skips.push(false),
            '1' => skips.push(true),
            other => {
                return Err(SpaceError::Parse {
                    position: bits_at + i,
                    msg: format!("expected skip bit 0 or 1, got {other:?}"),
                })
            }
        }
    }
    if skips.len() + 1 != node_aggs.len() {
        return Err(SpaceError::Parse {
            position: bits_at,
            msg: format!("{} layers need {} skip bits, got {}", node_aggs.len(), node_aggs.len() - 1, skips.len()),
        });
    }

    let layer_agg = if sc.at_end() {
        if skips.iter().any(|&b| b) {
            return Err(SpaceError::Parse {
                position: bits_at,
                msg: "skip bits must be zero when the layer clause is absent".into(),
            });
        }
        None
    } else {
        sc.expect(";")?;
        sc.expect("layer:")?;
        let layer_at = sc.pos;
        let id = sc.take_section();
        let kind = LayerAggregatorKind::from_id(id).ok_or_else(|| SpaceError::Parse {
            position: layer_at,
            msg: format!("unknown layer aggregator {id:?}"),
        })?;
        if !sc.at_end() {
            return Err(sc.err("unexpected trailing input"));
        }
        Some(kind)
    };

    Genotype::new(node_aggs, skips, layer_agg)
}
