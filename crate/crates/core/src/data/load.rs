use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::Interaction;
use crate::error::{Error, Result};
use crate::io::atomic_write_str;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// `user::item::rating::timestamp`
    Ml1m,
    /// `user<TAB>item[<TAB>timestamp]`
    Tsv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml1m" => Ok(Format::Ml1m),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::Config(format!("unknown format `{other}` (ml1m|tsv)"))),
        }
    }
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Ml1m => "ml1m",
            Format::Tsv => "tsv",
        }
    }
}

/// Deduplicated interactions with dense ids and the tables mapping them back.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    /// `users[dense] == original`
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub has_timestamps: bool,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

struct Raw<'a> {
    user: &'a str,
    item: &'a str,
    ts: Option<i64>,
}

fn parse_line<'a>(line: &'a str, format: Format) -> std::result::Result<Raw<'a>, String> {
    let fields: Vec<&str> = match format {
        Format::Ml1m => line.split("::").collect(),
        Format::Tsv => line.split('\t').collect(),
    };
    let (user, item, ts) = match (format, fields.as_slice()) {
        (Format::Ml1m, [u, i, _rating, ts]) => (*u, *i, Some(*ts)),
        (Format::Tsv, [u, i]) => (*u, *i, None),
        (Format::Tsv, [u, i, ts]) => (*u, *i, Some(*ts)),
        _ => return Err(format!("expected {} fields, got {}", if format == Format::Ml1m { "4 `::`-separated" } else { "2 or 3 tab-separated" }, fields.len())),
    };
    let (user, item) = (user.trim(), item.trim());
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    let ts = match ts {
        Some(t) => Some(t.trim().parse::<i64>().map_err(|e| format!("bad timestamp `{t}`: {e}"))?),
        None => None,
    };
    Ok(Raw { user, item, ts })
}

/// Dense ids in ascending original order (numeric when every id is an integer).
fn dense_ids(originals: impl Iterator<Item = String>) -> (Vec<String>, HashMap<String, u32>) {
    let mut ids: Vec<String> = originals.collect();
    ids.sort();
    ids.dedup();
    if ids.iter().all(|s| s.parse::<u64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<u64>().unwrap());
    }
    let map = ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    (ids, map)
}

/// Reads an interaction file. Ratings are discarded; a repeated (user, item)
/// pair keeps the record with the later timestamp.
pub fn load_interactions(path: &Path, format: Format) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut raws = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let raw = parse_line(line, format).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        })?;
        raws.push(raw);
    }
    if raws.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let has_timestamps = raws.iter().any(|r| r.ts.is_some());
    let (users, umap) = dense_ids(raws.iter().map(|r| r.user.to_string()));
    let (items, imap) = dense_ids(raws.iter().map(|r| r.item.to_string()));

    let mut kept: HashMap<(u32, u32), Interaction> = HashMap::new();
    for (seq, r) in raws.iter().enumerate() {
        let it = Interaction {
            user: umap[r.user],
            item: imap[r.item],
            timestamp: r.ts.unwrap_or(0),
            seq: seq as u64,
        };
        kept.entry((it.user, it.item))
            .and_modify(|old| {
                if it.timestamp >= old.timestamp {
                    *old = it;
                }
            })
            .or_insert(it);
    }
    let mut interactions: Vec<Interaction> = kept.into_values().collect();
    interactions.sort_by_key(|i| i.seq);
    Ok(Dataset {
        interactions,
        users,
        items,
        has_timestamps,
    })
}

/// Writes `original<TAB>dense` lines.
pub fn write_remap(path: &Path, originals: &[String]) -> Result<()> {
    let mut out = String::new();
    for (dense, orig) in originals.iter().enumerate() {
        out.push_str(&format!("{orig}\t{dense}\n"));
    }
    atomic_write_str(path, &out)
}

pub fn read_remap(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let (orig, dense) = line.split_once('\t').ok_or_else(|| parse_err("expected original<TAB>dense"))?;
        let dense: usize = dense.parse().map_err(|_| parse_err("bad dense id"))?;
        pairs.push((dense, orig.to_string()));
    }
    pairs.sort();
    if pairs.iter().enumerate().any(|(i, (d, _))| *d != i) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "dense ids are not 0..n".into(),
        });
    }
    Ok(pairs.into_iter().map(|(_, o)| o).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str, format: Format) -> Result<Dataset> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data");
        fs::write(&p, text).unwrap();
        load_interactions(&p, format)
    }

    #[test]
    fn singleton_ml1m() {
        let d = load_str("1::2::5::978300760\n", Format::Ml1m).unwrap();
        assert_eq!((d.num_users(), d.num_items(), d.interactions.len()), (1, 1, 1));
        assert_eq!(d.interactions[0].timestamp, 978300760);
        assert!(d.has_timestamps);
    }

    #[test]
    fn duplicate_pair_keeps_later_timestamp() {
        let d = load_str("7\t9\t500\n7\t9\t100\n7\t3\t50\n", Format::Tsv).unwrap();
        assert_eq!(d.interactions.len(), 2);
        let it = d.interactions.iter().find(|i| d.items[i.item as usize] == "9").unwrap();
        assert_eq!(it.timestamp, 500);
    }

    #[test]
    fn parse_error_reports_line() {
        let err = load_str("1::2::5::10\nbroken line\n", Format::Ml1m).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(load_str("", Format::Tsv), Err(Error::EmptyDataset)));
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        let d = load_str("10\t1\n2\t1\n", Format::Tsv).unwrap();
        assert_eq!(d.users, vec!["2".to_string(), "10".to_string()]);
        assert!(!d.has_timestamps);
    }

    #[test]
    fn remap_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("users.tsv");
        let ids = vec!["a".to_string(), "b".to_string()];
        write_remap(&p, &ids).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a\t0\nb\t1\n");
        assert_eq!(read_remap(&p).unwrap(), ids);
    }
}
