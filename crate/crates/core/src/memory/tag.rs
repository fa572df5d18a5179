//! Symbolic off-chip addresses.
//!
//! Grammar (HBM): `lL.wq|wk|wv|wa|wf1|wf2`, `wte_t`, `kt.lL.hH`, `vt.lL.hH`.
//! Grammar (DDR): `wte[tok.P]`, `wpe[P]`, `tok.P`, `lL.<param>`, `lnf_g`,
//! `lnf_b`, `const.<name>`, `act.tP.lL`, `scratch.<name>`.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HbmTag {
    /// A tiled weight-matrix shard.
    Weight { layer: usize, name: String },
    /// Transposed token embedding, used by the LM head.
    WteT,
    /// Key cache of one head, read as `K^T`.
    KeyT { layer: usize, head: usize },
    /// Value cache of one head, stored transposed.
    ValueT { layer: usize, head: usize },
    /// A name outside the built-in grammar; resolves only if a symbol table defines it.
    Symbol(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DdrTag {
    /// WTE row selected by the token held in token-buffer slot `slot`.
    WteRow {
        slot: usize,
    },
    WpeRow {
        pos: usize,
    },
    Tok {
        slot: usize,
    },
    LayerParam {
        layer: usize,
        name: String,
    },
    Final(String),
    Const(String),
    Act {
        pos: usize,
        layer: usize,
    },
    Scratch(String),
    /// A name outside the built-in grammar; resolves only if a symbol table defines it.
    Symbol(String),
}

pub const LAYER_WEIGHTS: [&str; 6] = ["wq", "wk", "wv", "wa", "wf1", "wf2"];
pub const LAYER_PARAMS: [&str; 10] = ["ln1_g", "ln1_b", "bq", "bk", "bv", "ba", "ln2_g", "ln2_b", "bf1", "bf2"];
pub const CONSTANTS: [&str; 2] = ["inv_emb", "eps"];

/// Characters allowed in a free-form symbol name.
pub fn is_symbol_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c))
}

impl HbmTag {
    /// Built-in grammar first, then a free-form symbol.
    pub fn parse_lenient(s: &str) -> Result<Self, Error> {
        s.parse().or_else(|e| if is_symbol_name(s) { Ok(HbmTag::Symbol(s.to_string())) } else { Err(e) })
    }
}

impl DdrTag {
    /// Built-in grammar first, then a free-form symbol.
    pub fn parse_lenient(s: &str) -> Result<Self, Error> {
        s.parse().or_else(|e| if is_symbol_name(s) { Ok(DdrTag::Symbol(s.to_string())) } else { Err(e) })
    }
}

fn bad(tag: &str) -> Error {
    Error::UnknownTag(tag.to_string())
}

fn num(s: &str, prefix: char, tag: &str) -> Result<usize, Error> {
    s.strip_prefix(prefix).and_then(|n| n.parse().ok()).ok_or_else(|| bad(tag))
}

fn layer_and_rest(s: &str) -> Option<(usize, &str)> {
    let (l, rest) = s.strip_prefix('l')?.split_once('.')?;
    Some((l.parse().ok()?, rest))
}

fn head_slot(rest: &str, tag: &str) -> Result<(usize, usize), Error> {
    let (l, h) = rest.split_once('.').ok_or_else(|| bad(tag))?;
    Ok((num(l, 'l', tag)?, num(h, 'h', tag)?))
}

impl FromStr for HbmTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "wte_t" {
            return Ok(HbmTag::WteT);
        }
        if let Some(rest) = s.strip_prefix("kt.") {
            let (layer, head) = head_slot(rest, s)?;
            return Ok(HbmTag::KeyT { layer, head });
        }
        if let Some(rest) = s.strip_prefix("vt.") {
            let (layer, head) = head_slot(rest, s)?;
            return Ok(HbmTag::ValueT { layer, head });
        }
        match layer_and_rest(s) {
            Some((layer, name)) if LAYER_WEIGHTS.contains(&name) => {
                Ok(HbmTag::Weight { layer, name: name.to_string() })
            }
            _ => Err(bad(s)),
        }
    }
}

impl fmt::Display for HbmTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HbmTag::Weight { layer, name } => write!(f, "l{layer}.{name}"),
            HbmTag::WteT => f.write_str("wte_t"),
            HbmTag::KeyT { layer, head } => write!(f, "kt.l{layer}.h{head}"),
            HbmTag::ValueT { layer, head } => write!(f, "vt.l{layer}.h{head}"),
            HbmTag::Symbol(s) => f.write_str(s),
        }
    }
}

impl FromStr for DdrTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if let Some(inner) = s.strip_prefix("wte[").and_then(|r| r.strip_suffix(']')) {
            let slot = inner.strip_prefix("tok.").ok_or_else(|| bad(s))?;
            return Ok(DdrTag::WteRow { slot: slot.parse().map_err(|_| bad(s))? });
        }
        if let Some(inner) = s.strip_prefix("wpe[").and_then(|r| r.strip_suffix(']')) {
            return Ok(DdrTag::WpeRow { pos: inner.parse().map_err(|_| bad(s))? });
        }
        if let Some(slot) = s.strip_prefix("tok.") {
            return Ok(DdrTag::Tok { slot: slot.parse().map_err(|_| bad(s))? });
        }
        if s == "lnf_g" || s == "lnf_b" {
            return Ok(DdrTag::Final(s.to_string()));
        }
        if let Some(name) = s.strip_prefix("const.") {
            if CONSTANTS.contains(&name) {
                return Ok(DdrTag::Const(name.to_string()));
            }
            return Err(bad(s));
        }
        if let Some(rest) = s.strip_prefix("act.") {
            let (p, l) = rest.split_once('.').ok_or_else(|| bad(s))?;
            return Ok(DdrTag::Act { pos: num(p, 't', s)?, layer: num(l, 'l', s)? });
        }
        if let Some(name) = s.strip_prefix("scratch.") {
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Ok(DdrTag::Scratch(name.to_string()));
            }
            return Err(bad(s));
        }
        match layer_and_rest(s) {
            Some((layer, name)) if LAYER_PARAMS.contains(&name) => {
                Ok(DdrTag::LayerParam { layer, name: name.to_string() })
            }
            _ => Err(bad(s)),
        }
    }
}

impl fmt::Display for DdrTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DdrTag::WteRow { slot } => write!(f, "wte[tok.{slot}]"),
            DdrTag::WpeRow { pos } => write!(f, "wpe[{pos}]"),
            DdrTag::Tok { slot } => write!(f, "tok.{slot}"),
            DdrTag::LayerParam { layer, name } => write!(f, "l{layer}.{name}"),
            DdrTag::Final(name) => f.write_str(name),
            DdrTag::Const(name) => write!(f, "const.{name}"),
            DdrTag::Act { pos, layer } => write!(f, "act.t{pos}.l{layer}"),
            DdrTag::Scratch(name) => write!(f, "scratch.{name}"),
            DdrTag::Symbol(s) => f.write_str(s),
        }
    }
}
