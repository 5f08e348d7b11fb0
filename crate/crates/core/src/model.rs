//! Memory layout, per-cycle bus signals, and the finite abstraction used by
//! the monitors and the model checker.
//!
//! Addresses are 16 bits. A layout names six (optionally seven) disjoint
//! regions over that address space:
//!
//! * `CR`  — code ROM holding the trusted measurement routine
//! * `KR`  — key ROM holding the 64-byte master key
//! * `XS`  — exclusive stack RAM reserved for the measurement routine
//! * `MR`  — MAC RAM; also used to pass the challenge in
//! * `AR`  — the attested region
//! * `CTR` — persistent counter (only in the authenticated variant)
//!
//! The workbench never needs concrete addresses beyond interval membership,
//! so each cycle is abstracted to an [`AbstractSymbol`]: the program counter
//! collapses to five classes, the data and DMA addresses to five region
//! classes each, plus the four enable bits. That alphabet has exactly
//! 5 * 5 * 5 * 16 = 2000 symbols, small enough for exhaustive checking.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Inclusive interval membership over 16-bit addresses.
///
/// Both endpoints are inclusive; callers must pass `lo <= hi`.
pub fn in_region(addr: u16, lo: u16, hi: u16) -> bool {
    debug_assert!(lo <= hi, "malformed interval [{lo:#06x}, {hi:#06x}]");
    addr >= lo && addr <= hi
}

/// Size of the MAC result region in bytes (HMAC-SHA256 output).
pub const MAC_SIZE: u16 = 32;

/// Region boundaries for one device configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryLayout {
    pub cr_min: u16,
    pub cr_max: u16,
    pub k_min: u16,
    pub k_max: u16,
    pub xs_min: u16,
    pub xs_max: u16,
    pub mac_addr: u16,
    pub mac_size: u16,
    pub ar_min: u16,
    pub ar_max: u16,
    /// Persistent counter region, present only in the authenticated variant.
    pub ctr: Option<(u16, u16)>,
    /// Base of the 32-byte buffer where the caller places the verifier's
    /// authentication token (authenticated variant only).
    pub vrf_auth: Option<u16>,
}

/// Named region identifiers, used in reports and violation messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Region {
    Cr,
    Kr,
    Xs,
    Mr,
    Ar,
    Ctr,
    VrfAuth,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Region::Cr => "CR",
            Region::Kr => "KR",
            Region::Xs => "XS",
            Region::Mr => "MR",
            Region::Ar => "AR",
            Region::Ctr => "CTR",
            Region::VrfAuth => "VRF_AUTH",
        };
        f.write_str(name)
    }
}

/// One named violation of the layout invariants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutViolation {
    /// A region with `min > max` or zero length.
    EmptyRegion(Region),
    /// A region whose end address does not fit in 16 bits.
    AddressOverflow(Region),
    /// `mac_size` must be exactly [`MAC_SIZE`].
    BadMacSize(u16),
    /// Two regions intersect.
    Overlap(Region, Region),
    /// CR may not contain address zero: the reset vector must lie outside
    /// the measured code so the monitors can observe the release condition.
    CrContainsZero,
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutViolation::EmptyRegion(r) => write!(f, "empty region {r}"),
            LayoutViolation::AddressOverflow(r) => write!(f, "{r} exceeds 16-bit address space"),
            LayoutViolation::BadMacSize(got) => write!(f, "mac_size must be 32, got {got}"),
            LayoutViolation::Overlap(a, b) => write!(f, "{a} \u{2229} {b} \u{2260} \u{2205}"),
            LayoutViolation::CrContainsZero => write!(f, "CR contains address 0"),
        }
    }
}

impl MemoryLayout {
    /// The default base-variant layout.
    ///
    /// XS is 2332 bytes based at 0x1000, CR is 4500 bytes, MR is the 32-byte
    /// MAC buffer, KR holds the 64-byte key, and AR defaults to 4 KiB.
    pub fn default_base() -> Self {
        MemoryLayout {
            cr_min: 0xA000,
            cr_max: 0xA000 + 4499,
            k_min: 0x6A00,
            k_max: 0x6A3F,
            xs_min: 0x1000,
            xs_max: 0x1000 + 2331,
            mac_addr: 0x0800,
            mac_size: MAC_SIZE,
            ar_min: 0x4000,
            ar_max: 0x4FFF,
            ctr: None,
            vrf_auth: None,
        }
    }

    /// The default layout for the authenticated variant: the base layout
    /// plus a 32-byte persistent counter and a 32-byte token buffer.
    pub fn default_auth() -> Self {
        MemoryLayout {
            ctr: Some((0x0900, 0x091F)),
            vrf_auth: Some(0x0820),
            ..Self::default_base()
        }
    }

    pub fn has_ctr(&self) -> bool {
        self.ctr.is_some()
    }

    /// MR as an inclusive interval.
    pub fn mr(&self) -> (u16, u16) {
        (self.mac_addr, self.mac_addr.wrapping_add(self.mac_size - 1))
    }

    /// Token buffer as an inclusive interval, when configured.
    pub fn vrf_auth_region(&self) -> Option<(u16, u16)> {
        self.vrf_auth.map(|base| (base, base.wrapping_add(31)))
    }

    pub fn pc_in_cr(&self, pc: u16) -> bool {
        in_region(pc, self.cr_min, self.cr_max)
    }

    pub fn in_kr(&self, addr: u16) -> bool {
        in_region(addr, self.k_min, self.k_max)
    }

    pub fn in_xs(&self, addr: u16) -> bool {
        in_region(addr, self.xs_min, self.xs_max)
    }

    pub fn in_mr(&self, addr: u16) -> bool {
        let (lo, hi) = self.mr();
        in_region(addr, lo, hi)
    }

    pub fn in_ar(&self, addr: u16) -> bool {
        in_region(addr, self.ar_min, self.ar_max)
    }

    pub fn in_ctr(&self, addr: u16) -> bool {
        match self.ctr {
            Some((lo, hi)) => in_region(addr, lo, hi),
            None => false,
        }
    }

    /// All named intervals, for overlap checks and reports. Ends are signed
    /// so a zero-size MR shows up as an empty interval rather than wrapping.
    fn intervals(&self) -> Vec<(Region, i64, i64)> {
        let mut v = vec![
            (Region::Cr, self.cr_min as i64, self.cr_max as i64),
            (Region::Kr, self.k_min as i64, self.k_max as i64),
            (Region::Xs, self.xs_min as i64, self.xs_max as i64),
            (
                Region::Mr,
                self.mac_addr as i64,
                self.mac_addr as i64 + self.mac_size as i64 - 1,
            ),
            (Region::Ar, self.ar_min as i64, self.ar_max as i64),
        ];
        if let Some((lo, hi)) = self.ctr {
            v.push((Region::Ctr, lo as i64, hi as i64));
        }
        if let Some(base) = self.vrf_auth {
            v.push((Region::VrfAuth, base as i64, base as i64 + 31));
        }
        v
    }

    /// Checks every layout invariant, returning all named violations.
    pub fn validate(&self) -> Result<(), Vec<LayoutViolation>> {
        let mut violations = Vec::new();
        let ivs = self.intervals();
        for &(region, lo, hi) in &ivs {
            if lo > hi {
                violations.push(LayoutViolation::EmptyRegion(region));
            }
            if hi > 0xFFFF {
                violations.push(LayoutViolation::AddressOverflow(region));
            }
        }
        if self.mac_size != MAC_SIZE {
            violations.push(LayoutViolation::BadMacSize(self.mac_size));
        }
        for (i, &(ra, lo_a, hi_a)) in ivs.iter().enumerate() {
            for &(rb, lo_b, hi_b) in ivs.iter().skip(i + 1) {
                if lo_a <= hi_b && lo_b <= hi_a {
                    violations.push(LayoutViolation::Overlap(ra, rb));
                }
            }
        }
        if self.cr_min == 0 {
            violations.push(LayoutViolation::CrContainsZero);
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

/// Spec-mandated free function form of [`MemoryLayout::validate`].
pub fn validate_layout(layout: &MemoryLayout) -> Result<(), Vec<LayoutViolation>> {
    layout.validate()
}

/// The monitored bus signals of one clock cycle.
///
/// `d_addr` is meaningful only when `r_en` or `w_en` is set, and `dma_addr`
/// only when `dma_en` is set; idle cycles carry zero there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CycleSignals {
    pub pc: u16,
    pub irq: bool,
    pub r_en: bool,
    pub w_en: bool,
    pub d_addr: u16,
    pub dma_en: bool,
    pub dma_addr: u16,
}

/// Program-counter classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PcClass {
    /// `pc == 0` (the reset vector).
    Zero,
    /// `pc == cr_min`, the first instruction of the trusted routine.
    CrMin,
    /// Strictly between `cr_min` and `cr_max`.
    CrMid,
    /// `pc == cr_max`, the last instruction of the trusted routine.
    CrMax,
    /// Outside CR and nonzero.
    Out,
}

impl PcClass {
    pub const ALL: [PcClass; 5] = [
        PcClass::Zero,
        PcClass::CrMin,
        PcClass::CrMid,
        PcClass::CrMax,
        PcClass::Out,
    ];

    pub fn in_cr(self) -> bool {
        matches!(self, PcClass::CrMin | PcClass::CrMid | PcClass::CrMax)
    }

    pub fn name(self) -> &'static str {
        match self {
            PcClass::Zero => "ZERO",
            PcClass::CrMin => "CR_MIN",
            PcClass::CrMid => "CR_MID",
            PcClass::CrMax => "CR_MAX",
            PcClass::Out => "OUT",
        }
    }
}

/// Data/DMA address classification over the monitored regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionClass {
    Kr,
    Xs,
    Mr,
    Ctr,
    Other,
}

impl RegionClass {
    pub const ALL: [RegionClass; 5] = [
        RegionClass::Kr,
        RegionClass::Xs,
        RegionClass::Mr,
        RegionClass::Ctr,
        RegionClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegionClass::Kr => "KR",
            RegionClass::Xs => "XS",
            RegionClass::Mr => "MR",
            RegionClass::Ctr => "CTR",
            RegionClass::Other => "OTHER",
        }
    }
}

/// Size of the abstract input alphabet.
pub const ALPHABET_SIZE: usize = 5 * 5 * 5 * 16;

/// One cycle abstracted to the finite alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AbstractSymbol {
    pub pc: PcClass,
    pub daddr: RegionClass,
    pub dmaaddr: RegionClass,
    pub irq: bool,
    pub r_en: bool,
    pub w_en: bool,
    pub dma_en: bool,
}

impl AbstractSymbol {
    /// An idle cycle: pc outside CR, no access, no interrupt.
    pub fn idle() -> Self {
        AbstractSymbol {
            pc: PcClass::Out,
            daddr: RegionClass::Other,
            dmaaddr: RegionClass::Other,
            irq: false,
            r_en: false,
            w_en: false,
            dma_en: false,
        }
    }

    /// Dense index in `0..ALPHABET_SIZE`, lexicographic in
    /// (pc, daddr, dmaaddr, irq, r_en, w_en, dma_en).
    pub fn index(&self) -> usize {
        let pc = self.pc as usize;
        let d = self.daddr as usize;
        let dma = self.dmaaddr as usize;
        let bits = ((self.irq as usize) << 3)
            | ((self.r_en as usize) << 2)
            | ((self.w_en as usize) << 1)
            | (self.dma_en as usize);
        ((pc * 5 + d) * 5 + dma) * 16 + bits
    }

    /// Inverse of [`AbstractSymbol::index`].
    pub fn from_index(index: usize) -> Self {
        assert!(index < ALPHABET_SIZE);
        let bits = index % 16;
        let rest = index / 16;
        let dma = rest % 5;
        let rest = rest / 5;
        let d = rest % 5;
        let pc = rest / 5;
        AbstractSymbol {
            pc: PcClass::ALL[pc],
            daddr: RegionClass::ALL[d],
            dmaaddr: RegionClass::ALL[dma],
            irq: bits & 8 != 0,
            r_en: bits & 4 != 0,
            w_en: bits & 2 != 0,
            dma_en: bits & 1 != 0,
        }
    }

    /// Iterates the whole alphabet in index order.
    pub fn alphabet() -> impl Iterator<Item = AbstractSymbol> {
        (0..ALPHABET_SIZE).map(AbstractSymbol::from_index)
    }

    /// Compact text encoding used in counterexample dumps:
    /// `pc=CR_MIN d=KR dma=OTHER irq=0 r=1 w=0 dmae=0`.
    pub fn encode(&self) -> String {
        format!(
            "pc={} d={} dma={} irq={} r={} w={} dmae={}",
            self.pc.name(),
            self.daddr.name(),
            self.dmaaddr.name(),
            self.irq as u8,
            self.r_en as u8,
            self.w_en as u8,
            self.dma_en as u8
        )
    }

    /// Parses the [`AbstractSymbol::encode`] form.
    pub fn decode(text: &str) -> Result<Self, String> {
        let mut sym = AbstractSymbol::idle();
        for field in text.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| format!("bad field `{field}`"))?;
            match key {
                "pc" => {
                    sym.pc = PcClass::ALL
                        .into_iter()
                        .find(|c| c.name() == value)
                        .ok_or_else(|| format!("bad pc class `{value}`"))?;
                }
                "d" | "dma" => {
                    let class = RegionClass::ALL
                        .into_iter()
                        .find(|c| c.name() == value)
                        .ok_or_else(|| format!("bad region class `{value}`"))?;
                    if key == "d" {
                        sym.daddr = class;
                    } else {
                        sym.dmaaddr = class;
                    }
                }
                "irq" | "r" | "w" | "dmae" => {
                    let bit = match value {
                        "0" => false,
                        "1" => true,
                        _ => return Err(format!("bad bit `{value}`")),
                    };
                    match key {
                        "irq" => sym.irq = bit,
                        "r" => sym.r_en = bit,
                        "w" => sym.w_en = bit,
                        _ => sym.dma_en = bit,
                    }
                }
                _ => return Err(format!("unknown field `{key}`")),
            }
        }
        Ok(sym)
    }
}

fn classify_pc(pc: u16, layout: &MemoryLayout) -> PcClass {
    if pc == 0 {
        PcClass::Zero
    } else if pc == layout.cr_min {
        PcClass::CrMin
    } else if pc == layout.cr_max {
        PcClass::CrMax
    } else if pc > layout.cr_min && pc < layout.cr_max {
        PcClass::CrMid
    } else {
        PcClass::Out
    }
}

fn classify_addr(addr: u16, layout: &MemoryLayout) -> RegionClass {
    if layout.in_kr(addr) {
        RegionClass::Kr
    } else if layout.in_xs(addr) {
        RegionClass::Xs
    } else if layout.in_mr(addr) {
        RegionClass::Mr
    } else if layout.in_ctr(addr) {
        RegionClass::Ctr
    } else {
        RegionClass::Other
    }
}

/// Maps a concrete cycle to its abstract symbol. Classification is a pure
/// function of interval membership; two cycles in the same classes map to
/// the same symbol.
pub fn abstract_signals(signals: &CycleSignals, layout: &MemoryLayout) -> AbstractSymbol {
    AbstractSymbol {
        pc: classify_pc(signals.pc, layout),
        daddr: classify_addr(signals.d_addr, layout),
        dmaaddr: classify_addr(signals.dma_addr, layout),
        irq: signals.irq,
        r_en: signals.r_en,
        w_en: signals.w_en,
        dma_en: signals.dma_en,
    }
}

/// Picks a concrete representative cycle for a symbol, such that
/// re-abstracting yields the same symbol. Returns `None` when a class is
/// uninhabited under the layout (e.g. CTR in the base variant).
pub fn concretize(sym: &AbstractSymbol, layout: &MemoryLayout) -> Option<CycleSignals> {
    let pc = match sym.pc {
        PcClass::Zero => 0,
        PcClass::CrMin => layout.cr_min,
        PcClass::CrMax => layout.cr_max,
        PcClass::CrMid => {
            if layout.cr_max > layout.cr_min + 1 {
                layout.cr_min + 1
            } else {
                return None;
            }
        }
        PcClass::Out => find_outside(layout, |a| a != 0 && !layout.pc_in_cr(a))?,
    };
    let pick = |class: RegionClass| -> Option<u16> {
        match class {
            RegionClass::Kr => Some(layout.k_min),
            RegionClass::Xs => Some(layout.xs_min),
            RegionClass::Mr => Some(layout.mac_addr),
            RegionClass::Ctr => layout.ctr.map(|(lo, _)| lo),
            RegionClass::Other => {
                find_outside(layout, |a| classify_addr(a, layout) == RegionClass::Other)
            }
        }
    };
    Some(CycleSignals {
        pc,
        irq: sym.irq,
        r_en: sym.r_en,
        w_en: sym.w_en,
        d_addr: pick(sym.daddr)?,
        dma_en: sym.dma_en,
        dma_addr: pick(sym.dmaaddr)?,
    })
}

fn find_outside(layout: &MemoryLayout, pred: impl Fn(u16) -> bool) -> Option<u16> {
    // Scanning is fine: called on tiny test/report paths only.
    let _ = layout;
    (1u16..=0xFFFF).find(|&a| pred(a))
}

/// Errors from parsing a layout config file.
#[derive(Debug, Error)]
pub enum LayoutConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid layout: {}", format_violations(.0))]
    Invalid(Vec<LayoutViolation>),
}

fn format_violations(v: &[LayoutViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses the flat key/value layout config format.
///
/// One `name = value` per line, `#` comments, values in decimal or `0x` hex.
/// Keys: `cr_min cr_max k_min k_max xs_min xs_max mac_addr mac_size ar_min
/// ar_max` plus optional `ctr_min ctr_max vrf_auth` for the authenticated
/// variant. The result is validated before being returned.
pub fn parse_layout_config(text: &str) -> Result<MemoryLayout, LayoutConfigError> {
    let mut fields: Vec<(String, u32, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| LayoutConfigError::Syntax {
                line: idx + 1,
                msg: "expected `name = value`".into(),
            })?;
        let value = value.trim();
        let parsed = if let Some(hexpart) = value.strip_prefix("0x").or(value.strip_prefix("0X")) {
            u32::from_str_radix(hexpart, 16)
        } else {
            u32::from_str(value)
        }
        .map_err(|_| LayoutConfigError::Syntax {
            line: idx + 1,
            msg: format!("bad number `{value}`"),
        })?;
        if parsed > 0xFFFF {
            return Err(LayoutConfigError::Syntax {
                line: idx + 1,
                msg: format!("`{value}` exceeds 16 bits"),
            });
        }
        fields.push((key.trim().to_string(), parsed, idx + 1));
    }

    let mut layout = MemoryLayout {
        cr_min: 0,
        cr_max: 0,
        k_min: 0,
        k_max: 0,
        xs_min: 0,
        xs_max: 0,
        mac_addr: 0,
        mac_size: 0,
        ar_min: 0,
        ar_max: 0,
        ctr: None,
        vrf_auth: None,
    };
    let mut seen = [false; 10];
    let mut ctr_min = None;
    let mut ctr_max = None;
    for (key, value, line) in fields {
        let v = value as u16;
        match key.as_str() {
            "cr_min" => (layout.cr_min, seen[0]) = (v, true),
            "cr_max" => (layout.cr_max, seen[1]) = (v, true),
            "k_min" => (layout.k_min, seen[2]) = (v, true),
            "k_max" => (layout.k_max, seen[3]) = (v, true),
            "xs_min" => (layout.xs_min, seen[4]) = (v, true),
            "xs_max" => (layout.xs_max, seen[5]) = (v, true),
            "mac_addr" => (layout.mac_addr, seen[6]) = (v, true),
            "mac_size" => (layout.mac_size, seen[7]) = (v, true),
            "ar_min" => (layout.ar_min, seen[8]) = (v, true),
            "ar_max" => (layout.ar_max, seen[9]) = (v, true),
            "ctr_min" => ctr_min = Some(v),
            "ctr_max" => ctr_max = Some(v),
            "vrf_auth" => layout.vrf_auth = Some(v),
            other => {
                let _ = line;
                return Err(LayoutConfigError::UnknownKey(other.to_string()));
            }
        }
    }
    const NAMES: [&str; 10] = [
        "cr_min", "cr_max", "k_min", "k_max", "xs_min", "xs_max", "mac_addr", "mac_size",
        "ar_min", "ar_max",
    ];
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(LayoutConfigError::MissingKey(NAMES[i]));
    }
    layout.ctr = match (ctr_min, ctr_max) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => return Err(LayoutConfigError::MissingKey("ctr_min/ctr_max pair")),
    };
    layout.validate().map_err(LayoutConfigError::Invalid)?;
    Ok(layout)
}

/// Renders a layout in the config-file format.
pub fn layout_to_config(layout: &MemoryLayout) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: u16| out.push_str(&format!("{k} = 0x{v:04X}\n"));
    push("cr_min", layout.cr_min);
    push("cr_max", layout.cr_max);
    push("k_min", layout.k_min);
    push("k_max", layout.k_max);
    push("xs_min", layout.xs_min);
    push("xs_max", layout.xs_max);
    push("mac_addr", layout.mac_addr);
    push("mac_size", layout.mac_size);
    push("ar_min", layout.ar_min);
    push("ar_max", layout.ar_max);
    if let Some((lo, hi)) = layout.ctr {
        push("ctr_min", lo);
        push("ctr_max", hi);
    }
    if let Some(base) = layout.vrf_auth {
        push("vrf_auth", base);
    }
    out
}
