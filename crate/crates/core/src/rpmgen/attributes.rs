use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attributes per panel.
pub const NUM_ATTRIBUTES: usize = 4;
/// Rule types per attribute.
pub const NUM_RULES: usize = 4;
/// Distinct values every attribute can take.
pub const NUM_VALUES: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Number,
    ShapeType,
    Size,
    Shade,
}

impl Attribute {
    pub const ALL: [Attribute; NUM_ATTRIBUTES] =
        [Attribute::Number, Attribute::ShapeType, Attribute::Size, Attribute::Shade];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Number => "number",
            Attribute::ShapeType => "shape",
            Attribute::Size => "size",
            Attribute::Shade => "shade",
        }
    }
}

/// Symbolic content of one panel.
///
/// `number` counts objects (1..=4); the other fields index lookup tables
/// (0..=3). Shape indices are triangle, square, pentagon, circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeVector {
    pub number: u8,
    pub shape_type: u8,
    pub size: u8,
    pub shade: u8,
}

impl AttributeVector {
    pub fn new(number: u8, shape_type: u8, size: u8, shade: u8) -> Result<Self> {
        let v = Self {
            number,
            shape_type,
            size,
            shade,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (1..=NUM_VALUES).contains(&self.number)
            && self.shape_type < NUM_VALUES
            && self.size < NUM_VALUES
            && self.shade < NUM_VALUES;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("attribute vector out of range: {self:?}")))
        }
    }

    /// Zero-based value index of every attribute, in [`Attribute::ALL`] order.
    pub fn indices(&self) -> [u8; NUM_ATTRIBUTES] {
        [self.number - 1, self.shape_type, self.size, self.shade]
    }

    pub fn from_indices(idx: [u8; NUM_ATTRIBUTES]) -> Result<Self> {
        Self::new(idx[0] + 1, idx[1], idx[2], idx[3])
    }

    pub fn index(&self, attr: Attribute) -> u8 {
        self.indices()[attr as usize]
    }

    /// Copy with one attribute's value index replaced.
    pub fn with_index(&self, attr: Attribute, value: u8) -> Self {
        let mut idx = self.indices();
        idx[attr as usize] = value % NUM_VALUES;
        Self::from_indices(idx).expect("index reduced modulo range")
    }

    /// Every valid attribute vector.
    pub fn all() -> impl Iterator<Item = AttributeVector> {
        let v = u32::from(NUM_VALUES);
        (0..v.pow(NUM_ATTRIBUTES as u32)).map(move |code| {
            let idx = std::array::from_fn(|i| ((code / v.pow(i as u32)) % v) as u8);
            Self::from_indices(idx).unwrap()
        })
    }
}

/// Rule types. Progressions are modular over the attribute's four values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    Constant = 0,
    ProgressionUp = 1,
    ProgressionDown = 2,
    DistributeThree = 3,
}

impl Rule {
    pub const ALL: [Rule; NUM_RULES] =
        [Rule::Constant, Rule::ProgressionUp, Rule::ProgressionDown, Rule::DistributeThree];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Rule::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("rule id {id} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Constant => "constant",
            Rule::ProgressionUp => "progression+1",
            Rule::ProgressionDown => "progression-1",
            Rule::DistributeThree => "distribute_three",
        }
    }
}

/// One rule per attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rules: [Rule; NUM_ATTRIBUTES],
}

impl RuleSpec {
    pub fn rule(&self, attr: Attribute) -> Rule {
        self.rules[attr as usize]
    }

    pub fn ids(&self) -> [u8; NUM_ATTRIBUTES] {
        self.rules.map(Rule::id)
    }

    pub fn from_ids(ids: [u8; NUM_ATTRIBUTES]) -> Result<Self> {
        let mut rules = [Rule::Constant; NUM_ATTRIBUTES];
        for (r, id) in rules.iter_mut().zip(ids) {
            *r = Rule::from_id(id)?;
        }
        Ok(Self { rules })
    }

    /// All `NUM_RULES^NUM_ATTRIBUTES` assignments.
    pub fn all() -> impl Iterator<Item = RuleSpec> {
        let m = NUM_RULES as u32;
        (0..m.pow(NUM_ATTRIBUTES as u32)).map(move |code| {
            let ids = std::array::from_fn(|i| ((code / m.pow(i as u32)) % m) as u8);
            RuleSpec::from_ids(ids).unwrap()
        })
    }
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (attr, rule)) in Attribute::ALL.iter().zip(&self.rules).enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", attr.name(), rule.name())?;
        }
        Ok(())
    }
}
