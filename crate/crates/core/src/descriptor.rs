//! Tiny parser for `name(arg, arg, ...)` descriptors used by metric and
//! diffeomorphism configs. Arguments may nest (`pullback(affine(...), flat)`)
//! and may contain bracketed lists (`[1, 0]`).

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Call {
    pub name: String,
    pub args: Vec<String>,
}

pub(crate) fn parse_call(desc: &str) -> Result<Call> {
    let s = desc.trim();
    let Some(open) = s.find('(') else {
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::descriptor(desc, "expected `name` or `name(args)`"));
        }
        return Ok(Call {
            name: s.to_ascii_lowercase(),
            args: Vec::new(),
        });
    };
    if !s.ends_with(')') {
        return Err(Error::descriptor(desc, "missing closing parenthesis"));
    }
    let name = s[..open].trim().to_ascii_lowercase();
    let inner = &s[open + 1..s.len() - 1];
    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in inner.char_indices() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::descriptor(desc, "unbalanced brackets"));
                }
            }
            ',' if depth == 0 => {
                args.push(inner[start..i].trim().to_string());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::descriptor(desc, "unbalanced brackets"));
    }
    let last = inner[start..].trim();
    if !last.is_empty() || !args.is_empty() {
        args.push(last.to_string());
    }
    if args.iter().any(|a| a.is_empty()) {
        return Err(Error::descriptor(desc, "empty argument"));
    }
    Ok(Call { name, args })
}

pub(crate) fn number(desc: &str, arg: &str) -> Result<f64> {
    arg.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::descriptor(desc, format!("`{arg}` is not a finite number")))
}

/// Flattens arguments, expanding `[a, b, ...]` lists, into numbers.
pub(crate) fn numbers(desc: &str, args: &[String]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for a in args {
        let a = a.trim();
        if let Some(list) = a.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            for item in list.split(',').filter(|s| !s.trim().is_empty()) {
                out.push(number(desc, item)?);
            }
        } else {
            out.push(number(desc, a)?);
        }
    }
    Ok(out)
}

/// 1-based axis argument converted to a 0-based index below `n`.
pub(crate) fn axis(desc: &str, arg: &str, n: usize) -> Result<usize> {
    let v = number(desc, arg)?;
    if v.fract() != 0.0 || v < 1.0 || v > n as f64 {
        return Err(Error::descriptor(desc, format!("axis `{arg}` must be an integer in 1..={n}")));
    }
    Ok(v as usize - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_top_level_commas() {
        let c = parse_call("pullback(affine(1,1,0,1,0,0), conformal(0.1,[1,0]))").unwrap();
        assert_eq!(c.name, "pullback");
        assert_eq!(c.args, vec!["affine(1,1,0,1,0,0)", "conformal(0.1,[1,0])"]);
    }

    #[test]
    fn bare_names_and_errors() {
        assert_eq!(parse_call(" Flat ").unwrap().name, "flat");
        assert!(parse_call("flat(").is_err());
        assert!(parse_call("f(1,,2)").is_err());
        assert!(parse_call("f((1)").is_err());
    }

    #[test]
    fn expands_lists() {
        let args = vec!["0.5".to_string(), "[1, 2]".to_string()];
        assert_eq!(numbers("x", &args).unwrap(), vec![0.5, 1.0, 2.0]);
        assert!(numbers("x", &["nan".to_string()]).is_err());
    }
}
