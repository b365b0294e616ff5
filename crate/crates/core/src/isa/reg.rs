use core::fmt;

/// A general-purpose register, 64-bit or 32-bit view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg {
    num: u8,
    wide: bool,
}

const NAMES64: [&str; 16] = [
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi", "r8", "r9", "r10", "r11", "r12", "r13",
    "r14", "r15",
];

const NAMES32: [&str; 16] = [
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi", "r8d", "r9d", "r10d", "r11d", "r12d",
    "r13d", "r14d", "r15d",
];

impl Reg {
    pub const RAX: Reg = Reg::q(0);
    pub const RCX: Reg = Reg::q(1);
    pub const RDX: Reg = Reg::q(2);
    pub const RBX: Reg = Reg::q(3);
    pub const RSP: Reg = Reg::q(4);
    pub const RBP: Reg = Reg::q(5);
    pub const RSI: Reg = Reg::q(6);
    pub const RDI: Reg = Reg::q(7);

    /// 64-bit register by hardware number.
    pub const fn q(num: u8) -> Reg {
        Reg {
            num: num & 15,
            wide: true,
        }
    }

    /// 32-bit register by hardware number.
    pub const fn d(num: u8) -> Reg {
        Reg {
            num: num & 15,
            wide: false,
        }
    }

    pub fn with_width(num: u8, wide: bool) -> Reg {
        if wide {
            Reg::q(num)
        } else {
            Reg::d(num)
        }
    }

    pub fn num(self) -> u8 {
        self.num
    }

    pub fn low3(self) -> u8 {
        self.num & 7
    }

    pub fn ext(self) -> bool {
        self.num >= 8
    }

    pub fn is_wide(self) -> bool {
        self.wide
    }

    pub fn name(self) -> &'static str {
        if self.wide {
            NAMES64[self.num as usize]
        } else {
            NAMES32[self.num as usize]
        }
    }

    pub fn from_name(name: &str) -> Option<Reg> {
        if let Some(i) = NAMES64.iter().position(|&n| n == name) {
            return Some(Reg::q(i as u8));
        }
        NAMES32
            .iter()
            .position(|&n| n == name)
            .map(|i| Reg::d(i as u8))
    }

    pub fn all() -> impl Iterator<Item = Reg> {
        (0..16).flat_map(|n| [Reg::q(n), Reg::d(n)])
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
