//! Praat TextGrid interval tiers, short and long text formats.
//!
//! Both formats reduce to the same value stream: the long format names each
//! value (`xmin = 0`), the short format lists the values bare. Container
//! lines such as `item [1]:` carry no value and are skipped.

use crate::error::{Error, Result};
use crate::phoneset::{fold_arctic48, PhoneLabel};

use super::{AnnotationSegment, ErrorType};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Str(String),
    Bare(String),
}

#[derive(Debug)]
struct Tokens {
    items: Vec<(usize, Token)>,
    pos: usize,
}

fn tokenize_values(line_no: usize, text: &str, out: &mut Vec<(usize, Token)>) -> Result<()> {
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') if chars.peek() == Some(&'"') => {
                        chars.next();
                        s.push('"');
                    }
                    Some('"') => break,
                    Some(ch) => s.push(ch),
                    None => return Err(Error::parse(line_no, "unterminated string")),
                }
            }
            out.push((line_no, Token::Str(s)));
        } else if c == '!' {
            break;
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            out.push((line_no, Token::Bare(s)));
        }
    }
    Ok(())
}

impl Tokens {
    fn new(text: &str) -> Result<Self> {
        let mut items = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim().trim_start_matches('\u{feff}');
            if line.is_empty() {
                continue;
            }
            let quote = line.find('"').unwrap_or(line.len());
            let values = match line.find('=') {
                Some(eq) if eq < quote => &line[eq + 1..],
                _ if line.starts_with("tiers?") => &line["tiers?".len()..],
                _ if line.ends_with(':') && quote == line.len() => continue,
                _ => line,
            };
            tokenize_values(line_no, values, &mut items)?;
        }
        Ok(Tokens { items, pos: 0 })
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(0, |(l, _)| *l)
    }

    fn next(&mut self, what: &str) -> Result<(usize, Token)> {
        let item = self
            .items
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::parse(self.line(), format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        match self.next(what)? {
            (_, Token::Str(s)) => Ok(s),
            (line, Token::Bare(b)) => Err(Error::parse(line, format!("expected quoted {what}, found `{b}`"))),
        }
    }

    fn bare(&mut self, what: &str) -> Result<(usize, String)> {
        match self.next(what)? {
            (line, Token::Bare(b)) => Ok((line, b)),
            (line, Token::Str(s)) => Err(Error::parse(line, format!("expected {what}, found \"{s}\""))),
        }
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let (line, b) = self.bare(what)?;
        b.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(line, format!("expected number for {what}, found `{b}`")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (line, b) = self.bare(what)?;
        b.parse::<usize>()
            .map_err(|_| Error::parse(line, format!("expected count for {what}, found `{b}`")))
    }
}

struct Interval {
    line: usize,
    xmin: f64,
    xmax: f64,
    text: String,
}

struct Tier {
    name: String,
    intervals: Vec<Interval>,
}

fn read_tiers(text: &str) -> Result<Vec<Tier>> {
    let mut t = Tokens::new(text)?;
    let file_type = t.string("file type")?;
    if file_type != "ooTextFile" {
        return Err(Error::parse(1, format!("unsupported file type `{file_type}`")));
    }
    let class = t.string("object class")?;
    if class != "TextGrid" {
        return Err(Error::parse(t.line(), format!("unsupported object class `{class}`")));
    }
    t.number("xmin")?;
    t.number("xmax")?;
    let (line, flag) = t.bare("tier flag")?;
    match flag.as_str() {
        "<exists>" => {}
        "<absent>" => return Ok(Vec::new()),
        _ => return Err(Error::parse(line, format!("unexpected tier flag `{flag}`"))),
    }
    let n_tiers = t.count("tier count")?;
    let mut tiers = Vec::with_capacity(n_tiers);
    for _ in 0..n_tiers {
        let line = t.line();
        let class = t.string("tier class")?;
        if class != "IntervalTier" {
            return Err(Error::parse(line, format!("unsupported tier class `{class}`")));
        }
        let name = t.string("tier name")?;
        t.number("tier xmin")?;
        t.number("tier xmax")?;
        let n = t.count("interval count")?;
        let mut intervals = Vec::with_capacity(n);
        for _ in 0..n {
            let xmin = t.number("interval xmin")?;
            let xmax = t.number("interval xmax")?;
            let line = t.line();
            let text = t.string("interval text")?;
            intervals.push(Interval { line, xmin, xmax, text });
        }
        tiers.push(Tier { name, intervals });
    }
    if t.pos != t.items.len() {
        return Err(Error::parse(t.line(), "trailing content after last tier"));
    }
    Ok(tiers)
}

fn fold(line: usize, label: &str) -> Result<PhoneLabel> {
    fold_arctic48(label.trim()).map_err(|e| Error::parse(line, e.to_string()))
}

fn segment(iv: &Interval) -> Result<Option<AnnotationSegment>> {
    let label = iv.text.trim();
    if label.is_empty() {
        return Ok(None);
    }
    let fields: Vec<&str> = label.split(',').collect();
    let (canonical, perceived, error) = match fields.as_slice() {
        [plain] => {
            let p = fold(iv.line, plain)?;
            (p.clone(), p, ErrorType::None)
        }
        [c, p, code] => {
            let error = match code.trim().to_ascii_lowercase().as_str() {
                "s" => ErrorType::Substitution,
                "d" => ErrorType::Deletion,
                "a" => ErrorType::Addition,
                other => return Err(Error::parse(iv.line, format!("unknown error type code `{other}`"))),
            };
            let (c, p) = (fold(iv.line, c)?, fold(iv.line, p)?);
            // Substitutions that vanish under folding are correct pronunciations.
            let error = if c == p { ErrorType::None } else { error };
            (c, p, error)
        }
        _ => return Err(Error::parse(iv.line, format!("malformed interval label `{label}`"))),
    };
    AnnotationSegment::new(iv.xmin, iv.xmax, canonical, perceived, error)
        .map(Some)
        .map_err(|e| Error::parse(iv.line, e.to_string()))
}

/// Parses the `phones` tier of a TextGrid into annotation segments.
///
/// Interval labels are a plain phone or a `canonical,perceived,code`
/// triplet with code `s`, `d` or `a`. Empty intervals are skipped.
pub fn parse_textgrid(text: &str) -> Result<Vec<AnnotationSegment>> {
    let tiers = read_tiers(text)?;
    let tier = tiers
        .iter()
        .find(|t| t.name.eq_ignore_ascii_case("phones"))
        .ok_or_else(|| Error::Data("TextGrid has no `phones` tier".into()))?;
    let mut out = Vec::new();
    for iv in &tier.intervals {
        if let Some(s) = segment(iv)? {
            out.push(s);
        }
    }
    Ok(out)
}
