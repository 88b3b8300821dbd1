// SPDX-License-Identifier: Apache-2.0

//! Granule protection: physical-address-space labels per granule, the
//! per-access granule protection check, and per-core bypass windows that
//! skip the check for a configured physical range.

use alloc::collections::BTreeMap;
use core::fmt;

pub const GIB: u64 = 1 << 30;
/// Default granule size in bytes.
pub const DEFAULT_GRANULE_SIZE: u64 = 4096;
/// Smallest permitted bypass window before scaling.
pub const WINDOW_MIN_BYTES: u64 = GIB;
/// Largest permitted bypass window before scaling. The 1:64 ratio between
/// the bounds is preserved under any `window_scale`.
pub const WINDOW_MAX_BYTES: u64 = 64 * GIB;

/// Physical-address-space label attached to each granule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PasLabel {
    Normal,
    Secure,
    Realm,
    Root,
    FullAccess,
    NoAccess,
}

impl PasLabel {
    pub const ALL: [PasLabel; 6] = [
        PasLabel::Normal,
        PasLabel::Secure,
        PasLabel::Realm,
        PasLabel::Root,
        PasLabel::FullAccess,
        PasLabel::NoAccess,
    ];

    fn index(self) -> usize {
        match self {
            PasLabel::Normal => 0,
            PasLabel::Secure => 1,
            PasLabel::Realm => 2,
            PasLabel::Root => 3,
            PasLabel::FullAccess => 4,
            PasLabel::NoAccess => 5,
        }
    }
}

/// Security state of a core.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SecurityState {
    NormalWorld,
    SecureWorld,
    RealmWorld,
    RootWorld,
}

impl SecurityState {
    pub const ALL: [SecurityState; 4] = [
        SecurityState::NormalWorld,
        SecurityState::SecureWorld,
        SecurityState::RealmWorld,
        SecurityState::RootWorld,
    ];

    fn index(self) -> usize {
        match self {
            SecurityState::NormalWorld => 0,
            SecurityState::SecureWorld => 1,
            SecurityState::RealmWorld => 2,
            SecurityState::RootWorld => 3,
        }
    }
}

/// The state-by-label access table consulted by the granule protection
/// check. Root accesses everything; each non-root world reaches its own
/// label plus normal and full-access memory; no-access admits only root.
/// Config-overridable so tests can pin it explicitly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessMatrix {
    allowed: [[bool; 6]; 4],
}

impl Default for AccessMatrix {
    fn default() -> Self {
        let mut m = AccessMatrix { allowed: [[false; 6]; 4] };
        use PasLabel::*;
        use SecurityState::*;
        for label in PasLabel::ALL {
            m.set(RootWorld, label, true);
        }
        for state in SecurityState::ALL {
            m.set(state, FullAccess, true);
        }
        for state in [NormalWorld, SecureWorld, RealmWorld] {
            m.set(state, Normal, true);
        }
        m.set(SecureWorld, Secure, true);
        m.set(RealmWorld, Realm, true);
        m
    }
}

impl AccessMatrix {
    pub fn allows(&self, state: SecurityState, label: PasLabel) -> bool {
        self.allowed[state.index()][label.index()]
    }

    pub fn set(&mut self, state: SecurityState, label: PasLabel, allowed: bool) {
        self.allowed[state.index()][label.index()] = allowed;
    }
}

/// Errors from GPT mutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GptError {
    /// Caller was not the root world.
    NotRoot(SecurityState),
    /// Empty or inverted granule range.
    InvalidRange { start: u64, end: u64 },
}

impl fmt::Display for GptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GptError::NotRoot(s) => write!(f, "GPT update requires root world, caller was {s:?}"),
            GptError::InvalidRange { start, end } => {
                write!(f, "invalid granule range [{start}, {end})")
            }
        }
    }
}

/// A granule protection fault, returned as an outcome rather than raised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gpf {
    /// The faulting granule number.
    pub granule: u64,
}

/// Identifier of a registered granule protection table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GptId(pub u32);

/// A half-open range of physical granule numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GranuleRange {
    pub start: u64,
    pub end: u64,
}

impl GranuleRange {
    pub fn new(start: u64, end: u64) -> GranuleRange {
        GranuleRange { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, granule: u64) -> bool {
        granule >= self.start && granule < self.end
    }

    pub fn overlaps(&self, other: &GranuleRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for GranuleRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Sparse granule-to-label map. Unmapped granules read as `Normal`, so a
/// fresh table grants nothing special and costs no memory even for
/// full-scale address ranges.
#[derive(Clone, Debug)]
pub struct Gpt {
    pub id: GptId,
    granules: BTreeMap<u64, PasLabel>,
    granule_size: u64,
}

impl Gpt {
    pub fn new(id: GptId, granule_size: u64) -> Gpt {
        debug_assert!(granule_size.is_power_of_two());
        Gpt { id, granules: BTreeMap::new(), granule_size }
    }

    pub fn granule_size(&self) -> u64 {
        self.granule_size
    }

    pub fn granule_of(&self, paddr: u64) -> u64 {
        paddr / self.granule_size
    }

    pub fn label(&self, granule: u64) -> PasLabel {
        self.granules.get(&granule).copied().unwrap_or(PasLabel::Normal)
    }

    /// Labels `[start, end)` granules. Only the root world may update the
    /// table; overlapping re-labels are last-writer-wins.
    pub fn set_pas(
        &mut self,
        start: u64,
        end: u64,
        label: PasLabel,
        caller: SecurityState,
    ) -> Result<(), GptError> {
        if caller != SecurityState::RootWorld {
            return Err(GptError::NotRoot(caller));
        }
        if end <= start {
            return Err(GptError::InvalidRange { start, end });
        }
        for g in start..end {
            if label == PasLabel::Normal {
                self.granules.remove(&g);
            } else {
                self.granules.insert(g, label);
            }
        }
        Ok(())
    }

    pub fn labeled_granules(&self) -> impl Iterator<Item = (u64, PasLabel)> + '_ {
        self.granules.iter().map(|(g, l)| (*g, *l))
    }
}

/// A per-core physical range that skips the granule protection check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BypassWindow {
    base: u64,
    size: u64,
}

/// Errors from bypass-window construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowError {
    SizeOutOfBounds { size: u64, min: u64, max: u64 },
    SizeNotPowerOfTwo(u64),
    BaseMisaligned { base: u64, size: u64 },
}

impl fmt::Display for WindowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowError::SizeOutOfBounds { size, min, max } => {
                write!(f, "window size {size:#x} outside [{min:#x}, {max:#x}]")
            }
            WindowError::SizeNotPowerOfTwo(s) => write!(f, "window size {s:#x} not a power of two"),
            WindowError::BaseMisaligned { base, size } => {
                write!(f, "window base {base:#x} not aligned to size {size:#x}")
            }
        }
    }
}

impl BypassWindow {
    /// Builds a window, enforcing the size bounds divided by `window_scale`
    /// (scale 1 keeps the hardware bounds; larger scales shrink miniature
    /// scenario files while preserving the min:max ratio).
    pub fn new(base: u64, size: u64, window_scale: u64) -> Result<BypassWindow, WindowError> {
        let scale = window_scale.max(1);
        let min = WINDOW_MIN_BYTES / scale;
        let max = WINDOW_MAX_BYTES / scale;
        if size < min || size > max {
            return Err(WindowError::SizeOutOfBounds { size, min, max });
        }
        if !size.is_power_of_two() {
            return Err(WindowError::SizeNotPowerOfTwo(size));
        }
        if !base.is_multiple_of(size) {
            return Err(WindowError::BaseMisaligned { base, size });
        }
        Ok(BypassWindow { base, size })
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    /// Half-open interval membership.
    pub fn covers(&self, paddr: u64) -> bool {
        paddr >= self.base && paddr < self.base + self.size
    }
}

/// True iff some window in the list covers `paddr`.
pub fn window_covers(windows: &[BypassWindow], paddr: u64) -> bool {
    windows.iter().any(|w| w.covers(paddr))
}

/// The granule protection check: a covering bypass window skips the check
/// entirely; otherwise the granule label is consulted against the matrix.
pub fn gpc_check(
    gpt: &Gpt,
    state: SecurityState,
    paddr: u64,
    windows: &[BypassWindow],
    matrix: &AccessMatrix,
) -> Result<(), Gpf> {
    if window_covers(windows, paddr) {
        return Ok(());
    }
    let granule = gpt.granule_of(paddr);
    if matrix.allows(state, gpt.label(granule)) {
        Ok(())
    } else {
        Err(Gpf { granule })
    }
}
