//! Line-delimited constraint files, one JSON object per line:
//!
//! ```text
//! {"type":"ml","a":0,"b":5}
//! {"type":"cl","a":0,"b":9}
//! {"type":"triplet","a":1,"p":2,"n":3}
//! {"type":"difficulty","i":4,"m":-0.1}
//! {"type":"group","name":"M","members":[0,1]}
//! {"type":"card_eq","groups":["M","F"]}
//! {"type":"card_bound","group":"M","L":10.0,"U":20.0}
//! {"type":"horn","ant":[["ml",0,1]],"cons":["cl",2,3]}
//! ```
//!
//! Blank lines are ignored.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CardinalityRule, ConstraintError, ConstraintSet, HornRule, PairKind, PairPredicate, Triplet};

type RawPredicate = (PairKind, usize, usize);

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Ml { a: usize, b: usize },
    Cl { a: usize, b: usize },
    Triplet { a: usize, p: usize, n: usize },
    Difficulty { i: usize, m: f64 },
    Group { name: String, members: Vec<usize> },
    CardEq { groups: [String; 2] },
    CardBound {
        group: String,
        #[serde(rename = "L")]
        lower: f64,
        #[serde(rename = "U")]
        upper: f64,
    },
    Horn { ant: Vec<RawPredicate>, cons: RawPredicate },
}

fn predicate((kind, a, b): RawPredicate) -> PairPredicate {
    PairPredicate { kind, a, b }
}

fn raw(p: &PairPredicate) -> RawPredicate {
    (p.kind, p.a, p.b)
}

fn apply(set: &mut ConstraintSet, record: Record) -> Result<(), ConstraintError> {
    match record {
        Record::Ml { a, b } => {
            set.pairwise.add_must_link(a, b)?;
        }
        Record::Cl { a, b } => {
            set.pairwise.add_cannot_link(a, b)?;
        }
        Record::Triplet { a, p, n } => set.triplets.push(Triplet::new(a, p, n)?),
        Record::Difficulty { i, m } => {
            if !(-1.0..=1.0).contains(&m) {
                return Err(ConstraintError::DifficultyRange { index: i, value: m });
            }
            set.difficulty.insert(i, m);
        }
        Record::Group { name, members } => {
            set.cardinality.groups.entry(name).or_default().extend(members);
        }
        Record::CardEq { groups } => set.cardinality.rules.push(CardinalityRule::Equality { groups }),
        Record::CardBound { group, lower, upper } => {
            if lower > upper {
                return Err(ConstraintError::BoundOrder { lower, upper });
            }
            set.cardinality
                .rules
                .push(CardinalityRule::Bounds { group, lower, upper })
        }
        Record::Horn { ant, cons } => set.horn_rules.push(HornRule::new(
            ant.into_iter().map(predicate).collect(),
            predicate(cons),
        )?),
    }
    Ok(())
}

pub fn parse_constraints(text: &str) -> Result<ConstraintSet, ConstraintError> {
    let mut set = ConstraintSet::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| ConstraintError::Parse {
            line: line_no,
            detail: e.to_string(),
        })?;
        apply(&mut set, record).map_err(|e| ConstraintError::Parse {
            line: line_no,
            detail: e.to_string(),
        })?;
    }
    set.cardinality.validate()?;
    Ok(set)
}

pub fn load_constraints(path: &Path) -> Result<ConstraintSet, ConstraintError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConstraintError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_constraints(&text)
}

fn records(set: &ConstraintSet) -> Vec<Record> {
    let mut out = Vec::new();
    out.extend(set.pairwise.must_links().iter().map(|&(a, b)| Record::Ml { a, b }));
    out.extend(set.pairwise.cannot_links().iter().map(|&(a, b)| Record::Cl { a, b }));
    out.extend(set.triplets.iter().map(|t| Record::Triplet {
        a: t.anchor,
        p: t.positive,
        n: t.negative,
    }));
    out.extend(set.difficulty.iter().map(|(&i, &m)| Record::Difficulty { i, m }));
    out.extend(set.cardinality.groups.iter().map(|(name, members)| Record::Group {
        name: name.clone(),
        members: members.iter().copied().collect(),
    }));
    out.extend(set.cardinality.rules.iter().map(|r| match r {
        CardinalityRule::Equality { groups } => Record::CardEq { groups: groups.clone() },
        CardinalityRule::Bounds { group, lower, upper } => Record::CardBound {
            group: group.clone(),
            lower: *lower,
            upper: *upper,
        },
    }));
    out.extend(set.horn_rules.iter().map(|r| Record::Horn {
        ant: r.antecedents.iter().map(raw).collect(),
        cons: raw(&r.consequent),
    }));
    out
}

pub fn write_constraints(out: &mut impl Write, set: &ConstraintSet) -> std::io::Result<()> {
    for r in records(set) {
        serde_json::to_writer(&mut *out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_constraints(path: &Path, set: &ConstraintSet) -> Result<(), ConstraintError> {
    let io_err = |source| ConstraintError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_constraints(&mut buf, set).map_err(io_err)?;
    std::fs::write(path, buf).map_err(io_err)
}
