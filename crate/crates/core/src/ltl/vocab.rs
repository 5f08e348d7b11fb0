//! The fixed atom vocabulary shared by the monitors, the checker, and the
//! simulator trace tooling. Atom names mirror the monitored signal classes.

use crate::model::{AbstractSymbol, PcClass, RegionClass};

/// The sixteen signal-level atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AtomId {
    PcInCr = 0,
    PcIsCrmin,
    PcIsCrmax,
    PcIsZero,
    DInKr,
    DInXs,
    DInMr,
    DInCtr,
    DmaInKr,
    DmaInXs,
    DmaInCtr,
    Irq,
    REn,
    WEn,
    DmaEn,
    Reset,
}

/// All atoms, in bit order.
pub const VOCABULARY: [AtomId; 16] = [
    AtomId::PcInCr,
    AtomId::PcIsCrmin,
    AtomId::PcIsCrmax,
    AtomId::PcIsZero,
    AtomId::DInKr,
    AtomId::DInXs,
    AtomId::DInMr,
    AtomId::DInCtr,
    AtomId::DmaInKr,
    AtomId::DmaInXs,
    AtomId::DmaInCtr,
    AtomId::Irq,
    AtomId::REn,
    AtomId::WEn,
    AtomId::DmaEn,
    AtomId::Reset,
];

impl AtomId {
    pub fn name(self) -> &'static str {
        match self {
            AtomId::PcInCr => "pc_in_cr",
            AtomId::PcIsCrmin => "pc_is_crmin",
            AtomId::PcIsCrmax => "pc_is_crmax",
            AtomId::PcIsZero => "pc_is_zero",
            AtomId::DInKr => "d_in_kr",
            AtomId::DInXs => "d_in_xs",
            AtomId::DInMr => "d_in_mr",
            AtomId::DInCtr => "d_in_ctr",
            AtomId::DmaInKr => "dma_in_kr",
            AtomId::DmaInXs => "dma_in_xs",
            AtomId::DmaInCtr => "dma_in_ctr",
            AtomId::Irq => "irq",
            AtomId::REn => "r_en",
            AtomId::WEn => "w_en",
            AtomId::DmaEn => "dma_en",
            AtomId::Reset => "reset",
        }
    }

    pub fn from_name(name: &str) -> Option<AtomId> {
        VOCABULARY.into_iter().find(|a| a.name() == name)
    }

    pub fn bit(self) -> u16 {
        1 << (self as u8)
    }
}

/// A valuation of the full vocabulary, packed into 16 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SignalValuation {
    bits: u16,
}

impl SignalValuation {
    pub fn new() -> Self {
        SignalValuation { bits: 0 }
    }

    pub fn with(mut self, atom: AtomId, value: bool) -> Self {
        self.set(atom, value);
        self
    }

    pub fn set(&mut self, atom: AtomId, value: bool) {
        if value {
            self.bits |= atom.bit();
        } else {
            self.bits &= !atom.bit();
        }
    }

    pub fn get(&self, atom: AtomId) -> bool {
        self.bits & atom.bit() != 0
    }

    /// Builds the valuation of an abstract symbol plus the monitor reset
    /// output observed in the same cycle.
    pub fn from_symbol(sym: &AbstractSymbol, reset: bool) -> Self {
        let mut v = SignalValuation::new();
        v.set(AtomId::PcInCr, sym.pc.in_cr());
        v.set(AtomId::PcIsCrmin, sym.pc == PcClass::CrMin);
        v.set(AtomId::PcIsCrmax, sym.pc == PcClass::CrMax);
        v.set(AtomId::PcIsZero, sym.pc == PcClass::Zero);
        v.set(AtomId::DInKr, sym.daddr == RegionClass::Kr);
        v.set(AtomId::DInXs, sym.daddr == RegionClass::Xs);
        v.set(AtomId::DInMr, sym.daddr == RegionClass::Mr);
        v.set(AtomId::DInCtr, sym.daddr == RegionClass::Ctr);
        v.set(AtomId::DmaInKr, sym.dmaaddr == RegionClass::Kr);
        v.set(AtomId::DmaInXs, sym.dmaaddr == RegionClass::Xs);
        v.set(AtomId::DmaInCtr, sym.dmaaddr == RegionClass::Ctr);
        v.set(AtomId::Irq, sym.irq);
        v.set(AtomId::REn, sym.r_en);
        v.set(AtomId::WEn, sym.w_en);
        v.set(AtomId::DmaEn, sym.dma_en);
        v.set(AtomId::Reset, reset);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AbstractSymbol;

    #[test]
    fn names_roundtrip() {
        for atom in VOCABULARY {
            assert_eq!(AtomId::from_name(atom.name()), Some(atom));
        }
        assert_eq!(AtomId::from_name("nonsense"), None);
    }

    #[test]
    fn symbol_valuation() {
        let sym = AbstractSymbol {
            pc: crate::model::PcClass::CrMin,
            daddr: crate::model::RegionClass::Kr,
            dmaaddr: crate::model::RegionClass::Other,
            irq: false,
            r_en: true,
            w_en: false,
            dma_en: false,
        };
        let v = SignalValuation::from_symbol(&sym, true);
        assert!(v.get(AtomId::PcInCr));
        assert!(v.get(AtomId::PcIsCrmin));
        assert!(!v.get(AtomId::PcIsCrmax));
        assert!(v.get(AtomId::DInKr));
        assert!(v.get(AtomId::REn));
        assert!(v.get(AtomId::Reset));
        assert!(!v.get(AtomId::DmaEn));
    }
}
