//! Thread-local operation and kernel-invocation counters.
//!
//! Arithmetic counts are only produced by [`Tally`](crate::lanes::Tally);
//! kernel invocations are recorded by every tensor kernel regardless of the
//! number type. Each rank thread owns its own counters.

use std::cell::Cell;

/// Snapshot of the counters of the current thread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelCounters {
    pub adds: u64,
    pub mults: u64,
    pub fmas: u64,
    /// Divisions, negations and absolute values.
    pub other: u64,
    /// 1D sweeps with a value (basis change) matrix.
    pub basis_change: u64,
    /// 1D sweeps with a collocation derivative matrix.
    pub derivative: u64,
    /// Face-normal interpolations; values and normal derivatives count separately.
    pub face_normal: u64,
    /// Sweeps spent on on-the-fly geometry (G1/G2); not part of the operator schedule.
    pub geometry: u64,
    /// Values read per lane by face-restricted vector access.
    pub values_read: u64,
}

impl KernelCounters {
    pub fn kernel_invocations(&self) -> u64 {
        self.basis_change + self.derivative + self.face_normal
    }

    /// Floating point operations with an FMA counted as two.
    pub fn flops(&self) -> u64 {
        self.adds + self.mults + 2 * self.fmas + self.other
    }

    pub fn plus(&self, other: &KernelCounters) -> KernelCounters {
        KernelCounters {
            adds: self.adds + other.adds,
            mults: self.mults + other.mults,
            fmas: self.fmas + other.fmas,
            other: self.other + other.other,
            basis_change: self.basis_change + other.basis_change,
            derivative: self.derivative + other.derivative,
            face_normal: self.face_normal + other.face_normal,
            geometry: self.geometry + other.geometry,
            values_read: self.values_read + other.values_read,
        }
    }

    pub fn since(&self, earlier: &KernelCounters) -> KernelCounters {
        KernelCounters {
            adds: self.adds - earlier.adds,
            mults: self.mults - earlier.mults,
            fmas: self.fmas - earlier.fmas,
            other: self.other - earlier.other,
            basis_change: self.basis_change - earlier.basis_change,
            derivative: self.derivative - earlier.derivative,
            face_normal: self.face_normal - earlier.face_normal,
            geometry: self.geometry - earlier.geometry,
            values_read: self.values_read - earlier.values_read,
        }
    }
}

thread_local! {
    static COUNTERS: Cell<KernelCounters> = Cell::new(KernelCounters::default());
}

#[inline]
fn update(f: impl FnOnce(&mut KernelCounters)) {
    COUNTERS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub fn reset() {
    COUNTERS.with(|c| c.set(KernelCounters::default()));
}

pub fn snapshot() -> KernelCounters {
    COUNTERS.with(|c| c.get())
}

/// Runs `f` and returns its result together with the counts it produced.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, KernelCounters) {
    let before = snapshot();
    let r = f();
    (r, snapshot().since(&before))
}

#[inline]
pub(crate) fn record_adds(n: u64) {
    update(|c| c.adds += n);
}
#[inline]
pub(crate) fn record_mults(n: u64) {
    update(|c| c.mults += n);
}
#[inline]
pub(crate) fn record_fmas(n: u64) {
    update(|c| c.fmas += n);
}
#[inline]
pub(crate) fn record_other(n: u64) {
    update(|c| c.other += n);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Sweep {
    BasisChange,
    Derivative,
    FaceNormal,
    Geometry,
}

#[inline]
pub(crate) fn record_sweeps(kind: Sweep, n: u64) {
    update(|c| match kind {
        Sweep::BasisChange => c.basis_change += n,
        Sweep::Derivative => c.derivative += n,
        Sweep::FaceNormal => c.face_normal += n,
        Sweep::Geometry => c.geometry += n,
    });
}

#[inline]
pub(crate) fn record_reads(n: u64) {
    update(|c| c.values_read += n);
}
