//! Plain-text `key = value` files with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type KvMap = BTreeMap<String, String>;

pub fn parse(text: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::format(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::format(format!("line {}: duplicate key `{k}`", lineno + 1)));
        }
    }
    Ok(map)
}

pub fn render(map: &KvMap) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses `map[key]` if present.
pub fn get<T: FromStr>(map: &KvMap, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| Error::config(format!("invalid value {v:?} for `{key}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let m = parse("# header\n a = 1 \nb=two # trailing\n\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "two");
        assert_eq!(get::<u32>(&m, "a").unwrap(), Some(1));
        assert!(get::<u32>(&m, "b").is_err());
        assert_eq!(get::<u32>(&m, "c").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse("novalue\n").is_err());
        assert!(parse("a = 1\na = 2\n").is_err());
        assert!(parse(" = 3\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let m = parse("x = 1.5\ny = true\n").unwrap();
        assert_eq!(parse(&render(&m)).unwrap(), m);
    }
}
