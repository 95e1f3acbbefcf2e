use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::volumes::{BodySite, CaseMeta, PtvLocation, PtvSize, TargetLevels};

/// Conjunction of optional metadata constraints. The default passes everything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Filter {
    pub site: Option<BodySite>,
    pub protocol: Option<String>,
    pub levels: Option<TargetLevels>,
    pub size: Option<PtvSize>,
    pub location: Option<PtvLocation>,
    pub class_id: Option<u8>,
}

impl Filter {
    pub fn is_all_pass(&self) -> bool {
        *self == Filter::default()
    }

    pub fn matches(&self, m: &CaseMeta) -> bool {
        self.site.is_none_or(|s| s == m.criteria.site)
            && self.protocol.as_deref().is_none_or(|p| p.eq_ignore_ascii_case(&m.protocol))
            && self.levels.is_none_or(|v| v == m.criteria.levels)
            && self.size.is_none_or(|v| v == m.criteria.size)
            && self.location.is_none_or(|v| v == m.criteria.location)
            && self.class_id.is_none_or(|v| v == m.class_id)
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(v) = self.site {
            parts.push(format!("site={v}"));
        }
        if let Some(v) = &self.protocol {
            parts.push(format!("protocol={v}"));
        }
        if let Some(v) = self.levels {
            parts.push(format!("levels={v}"));
        }
        if let Some(v) = self.size {
            parts.push(format!("size={v}"));
        }
        if let Some(v) = self.location {
            parts.push(format!("location={v}"));
        }
        if let Some(v) = self.class_id {
            parts.push(format!("class_id={v}"));
        }
        if parts.is_empty() {
            f.write_str("all")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// Parses `key=value` pairs separated by commas, e.g. `site=prostate,protocol=VMAT`.
/// `all` or the empty string is the all-pass filter.
impl FromStr for Filter {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut f = Filter::default();
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(f);
        }
        for part in s.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| IndexError::Filter(format!("expected key=value, got `{part}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |e: String| IndexError::Filter(e);
            match k {
                "site" => f.site = Some(v.parse().map_err(bad)?),
                "protocol" => f.protocol = Some(v.to_string()),
                "levels" => f.levels = Some(v.parse().map_err(bad)?),
                "size" => f.size = Some(v.parse().map_err(bad)?),
                "location" => f.location = Some(v.parse().map_err(bad)?),
                "class_id" => {
                    f.class_id = Some(v.parse().map_err(|_| bad(format!("bad class id `{v}`")))?)
                }
                _ => return Err(bad(format!("unknown filter key `{k}`"))),
            }
        }
        Ok(f)
    }
}
