//! Collaboration strategy lattice.
//!
//! A strategy is one point in governance × participation × interaction ×
//! context, written as `G<d>-P<d>-I<d>-C<d>` (for example `G2-P3-I1-C3`).
//! Parsing only checks the grammar; [`validate_strategy`] checks the
//! cross-dimension rules, of which exactly nine combinations survive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default round cap when a config does not set one.
pub const DEFAULT_MAX_ROUNDS: u32 = 10;

/// Who coordinates the discussion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Governance {
    /// G1: agents self-organize.
    Decentralized,
    /// G2: an instructor agent coordinates.
    Centralized,
}

/// Which agents speak in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Participation {
    /// P1: every discussion agent, every round.
    Full,
    /// P2: agents volunteer.
    Selective,
    /// P3: the instructor picks an ordered subset.
    InstructorDecided,
}

/// Intra-round communication topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InteractionPattern {
    /// I1: everyone answers from the pre-round state.
    Simultaneous,
    /// I2: fixed speaking order, later speakers see earlier ones.
    OrderedSequential,
    /// I3: seeded random order per round.
    RandomSequential,
    /// I4: speakers choose their addressees.
    SelectivePointToPoint,
}

/// What history an agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextStrategy {
    /// C1: full log of the previous round.
    FullLastRoundLog,
    /// C2: the agent's own rolling summary plus the previous round's log.
    SelfSummarized,
    /// C3: the instructor's summary.
    InstructorSummary,
}

macro_rules! digit_enum {
    ($ty:ident, $prefix:literal, [$($variant:ident = $digit:literal),+ $(,)?]) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];
            pub const PREFIX: char = $prefix;

            pub fn digit(self) -> u8 {
                match self {
                    $($ty::$variant => $digit),+
                }
            }

            pub fn from_digit(d: u8) -> Option<Self> {
                match d {
                    $($digit => Some($ty::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.digit())
            }
        }
    };
}

digit_enum!(Governance, 'G', [Decentralized = 1, Centralized = 2]);
digit_enum!(Participation, 'P', [Full = 1, Selective = 2, InstructorDecided = 3]);
digit_enum!(
    InteractionPattern,
    'I',
    [Simultaneous = 1, OrderedSequential = 2, RandomSequential = 3, SelectivePointToPoint = 4]
);
digit_enum!(ContextStrategy, 'C', [FullLastRoundLog = 1, SelfSummarized = 2, InstructorSummary = 3]);

/// The four strategy dimensions, without run controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Strategy {
    pub governance: Governance,
    pub participation: Participation,
    pub interaction: InteractionPattern,
    pub context: ContextStrategy,
}

impl Strategy {
    pub const fn new(
        governance: Governance,
        participation: Participation,
        interaction: InteractionPattern,
        context: ContextStrategy,
    ) -> Self {
        Self { governance, participation, interaction, context }
    }

    pub fn is_centralized(&self) -> bool {
        self.governance == Governance::Centralized
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}-{}", self.governance, self.participation, self.interaction, self.context)
    }
}

impl FromStr for Strategy {
    type Err = ParseStrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_strategy(s)
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_strategy(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseStrategyError {
    #[error("strategy string is empty")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("{dimension} digit {digit} is out of range")]
    OutOfRange { dimension: char, digit: u8, offset: usize },
}

/// Parses `G<d>-P<d>-I<d>-C<d>`. Cross-dimension rules are not checked here.
pub fn parse_strategy(text: &str) -> Result<Strategy, ParseStrategyError> {
    if text.is_empty() {
        return Err(ParseStrategyError::Empty);
    }
    let bytes = text.as_bytes();
    let mut digits = [0u8; 4];
    let prefixes = [Governance::PREFIX, Participation::PREFIX, InteractionPattern::PREFIX, ContextStrategy::PREFIX];
    let mut pos = 0;
    for (i, prefix) in prefixes.iter().enumerate() {
        if i > 0 {
            expect_byte(bytes, pos, b'-')?;
            pos += 1;
        }
        expect_byte(bytes, pos, *prefix as u8)?;
        pos += 1;
        match bytes.get(pos) {
            Some(b) if b.is_ascii_digit() => digits[i] = b - b'0',
            Some(_) => return Err(syntax(pos, format!("expected a digit after '{prefix}'"))),
            None => return Err(syntax(pos, "unexpected end of input")),
        }
        pos += 1;
    }
    if pos != bytes.len() {
        return Err(syntax(pos, "trailing characters"));
    }

    let out_of_range =
        |i: usize| ParseStrategyError::OutOfRange { dimension: prefixes[i], digit: digits[i], offset: i * 3 + 1 };
    Ok(Strategy {
        governance: Governance::from_digit(digits[0]).ok_or_else(|| out_of_range(0))?,
        participation: Participation::from_digit(digits[1]).ok_or_else(|| out_of_range(1))?,
        interaction: InteractionPattern::from_digit(digits[2]).ok_or_else(|| out_of_range(2))?,
        context: ContextStrategy::from_digit(digits[3]).ok_or_else(|| out_of_range(3))?,
    })
}

fn expect_byte(bytes: &[u8], pos: usize, want: u8) -> Result<(), ParseStrategyError> {
    match bytes.get(pos) {
        Some(b) if *b == want => Ok(()),
        Some(_) => Err(syntax(pos, format!("expected '{}'", want as char))),
        None => Err(syntax(pos, "unexpected end of input")),
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ParseStrategyError {
    ParseStrategyError::Syntax { offset, message: message.into() }
}

/// Named cross-dimension rules. The string form is what diagnostics print.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// P1 and P2 belong to G1; P3 belongs to G2.
    ParticipationMatchesGovernance,
    I1RequiresG1P1OrG2P3,
    I2RequiresG1P1OrG2P3,
    I3RequiresG1P1,
    I4RequiresG1P2,
    C1RequiresG1P1,
    C2RequiresG1,
    C3RequiresG2P3,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::ParticipationMatchesGovernance => "P-matches-G",
            Rule::I1RequiresG1P1OrG2P3 => "I1-requires-G1-P1-or-G2-P3",
            Rule::I2RequiresG1P1OrG2P3 => "I2-requires-G1-P1-or-G2-P3",
            Rule::I3RequiresG1P1 => "I3-requires-G1-P1",
            Rule::I4RequiresG1P2 => "I4-requires-G1-P2",
            Rule::C1RequiresG1P1 => "C1-requires-G1-P1",
            Rule::C2RequiresG1 => "C2-requires-G1",
            Rule::C3RequiresG2P3 => "C3-requires-G2-P3",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("strategy {strategy} violates {}", join_rules(.violations))]
pub struct ConstraintViolation {
    pub strategy: Strategy,
    pub violations: Vec<Rule>,
}

fn join_rules(rules: &[Rule]) -> String {
    rules.iter().map(|r| r.name()).collect::<Vec<_>>().join(", ")
}

/// Checks every cross-dimension rule and reports all that fail.
pub fn validate_strategy(strategy: &Strategy) -> Result<(), ConstraintViolation> {
    use ContextStrategy as C;
    use Governance as G;
    use InteractionPattern as I;
    use Participation as P;

    let gp = (strategy.governance, strategy.participation);
    let g1p1 = gp == (G::Decentralized, P::Full);
    let g1p2 = gp == (G::Decentralized, P::Selective);
    let g2p3 = gp == (G::Centralized, P::InstructorDecided);

    let mut violations = Vec::new();
    if !(g1p1 || g1p2 || g2p3) {
        violations.push(Rule::ParticipationMatchesGovernance);
    }
    match strategy.interaction {
        I::Simultaneous if !(g1p1 || g2p3) => violations.push(Rule::I1RequiresG1P1OrG2P3),
        I::OrderedSequential if !(g1p1 || g2p3) => violations.push(Rule::I2RequiresG1P1OrG2P3),
        I::RandomSequential if !g1p1 => violations.push(Rule::I3RequiresG1P1),
        I::SelectivePointToPoint if !g1p2 => violations.push(Rule::I4RequiresG1P2),
        _ => {}
    }
    match strategy.context {
        C::FullLastRoundLog if !g1p1 => violations.push(Rule::C1RequiresG1P1),
        C::SelfSummarized if strategy.governance != G::Decentralized => violations.push(Rule::C2RequiresG1),
        C::InstructorSummary if !g2p3 => violations.push(Rule::C3RequiresG2P3),
        _ => {}
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(ConstraintViolation { strategy: *strategy, violations })
    }
}

/// The legal strategies, in canonical order.
pub fn enumerate_valid_strategies() -> Vec<Strategy> {
    use ContextStrategy as C;
    use Governance as G;
    use InteractionPattern as I;
    use Participation as P;

    let g1p1 = |i, c| Strategy::new(G::Decentralized, P::Full, i, c);
    vec![
        g1p1(I::Simultaneous, C::FullLastRoundLog),
        g1p1(I::OrderedSequential, C::FullLastRoundLog),
        g1p1(I::RandomSequential, C::FullLastRoundLog),
        g1p1(I::Simultaneous, C::SelfSummarized),
        g1p1(I::OrderedSequential, C::SelfSummarized),
        g1p1(I::RandomSequential, C::SelfSummarized),
        Strategy::new(G::Decentralized, P::Selective, I::SelectivePointToPoint, C::SelfSummarized),
        Strategy::new(G::Centralized, P::InstructorDecided, I::Simultaneous, C::InstructorSummary),
        Strategy::new(G::Centralized, P::InstructorDecided, I::OrderedSequential, C::InstructorSummary),
    ]
}

/// Every point of the 2×3×4×3 lattice, legal or not.
pub fn all_quadruples() -> impl Iterator<Item = Strategy> {
    Governance::ALL.iter().flat_map(|&g| {
        Participation::ALL.iter().flat_map(move |&p| {
            InteractionPattern::ALL
                .iter()
                .flat_map(move |&i| ContextStrategy::ALL.iter().map(move |&c| Strategy::new(g, p, i, c)))
        })
    })
}

/// A validated strategy plus the run controls that make a run reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub max_rounds: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyConfigError {
    #[error(transparent)]
    Parse(#[from] ParseStrategyError),
    #[error(transparent)]
    Constraint(#[from] ConstraintViolation),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, max_rounds: u32, seed: u64) -> Result<Self, StrategyConfigError> {
        validate_strategy(&strategy)?;
        if max_rounds == 0 {
            return Err(StrategyConfigError::ZeroRounds);
        }
        Ok(Self { strategy, max_rounds, seed })
    }

    pub fn parse(text: &str, max_rounds: u32, seed: u64) -> Result<Self, StrategyConfigError> {
        Self::new(parse_strategy(text)?, max_rounds, seed)
    }

    pub fn governance(&self) -> Governance {
        self.strategy.governance
    }

    pub fn participation(&self) -> Participation {
        self.strategy.participation
    }

    pub fn interaction(&self) -> InteractionPattern {
        self.strategy.interaction
    }

    pub fn context(&self) -> ContextStrategy {
        self.strategy.context
    }
}
