use std::collections::BTreeMap;

use super::{powi_exact, BinOp, Expr, ExprError, Func, Node, MAX_INT_EXPONENT};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Slot(u32),
    Neg,
    Bin(BinOp, u32),
    PowInt(i64, u32),
    Call(Func, u32),
}

/// An expression flattened into a postfix tape over numbered input slots.
///
/// Named parameters are folded in as literals at compile time. Each fallible
/// operation keeps a handle on its source node so domain errors can still
/// name the offending subexpression.
#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<Op>,
    sites: Vec<Expr>,
    depth: usize,
}

impl Compiled {
    /// Compile `expr`, mapping `slots[i]` to input `i` and `constants` to literals.
    pub fn new(
        expr: &Expr,
        slots: &[String],
        constants: &BTreeMap<String, f64>,
    ) -> Result<Compiled, ExprError> {
        let mut c = Compiled {
            ops: Vec::new(),
            sites: Vec::new(),
            depth: 0,
        };
        let mut depth = 0usize;
        c.emit(expr, slots, constants, &mut depth)?;
        Ok(c)
    }

    fn push(&mut self, op: Op, depth: &mut usize, delta: isize) {
        self.ops.push(op);
        *depth = (*depth as isize + delta) as usize;
        self.depth = self.depth.max(*depth);
    }

    fn site(&mut self, e: &Expr) -> u32 {
        self.sites.push(e.clone());
        (self.sites.len() - 1) as u32
    }

    fn emit(
        &mut self,
        e: &Expr,
        slots: &[String],
        constants: &BTreeMap<String, f64>,
        depth: &mut usize,
    ) -> Result<(), ExprError> {
        match e.node() {
            Node::Num(v) => self.push(Op::Const(*v), depth, 1),
            Node::Var(name) => {
                if let Some(i) = slots.iter().position(|s| **s == **name) {
                    self.push(Op::Slot(i as u32), depth, 1);
                } else if let Some(v) = constants.get(&**name) {
                    self.push(Op::Const(*v), depth, 1);
                } else {
                    return Err(ExprError::Unbound(name.to_string()));
                }
            }
            Node::Neg(a) => {
                self.emit(a, slots, constants, depth)?;
                self.push(Op::Neg, depth, 0);
            }
            Node::Bin(BinOp::Pow, a, b)
                if b.as_num()
                    .is_some_and(|k| k.fract() == 0.0 && k.abs() <= MAX_INT_EXPONENT) =>
            {
                self.emit(a, slots, constants, depth)?;
                let s = self.site(e);
                self.push(Op::PowInt(b.as_num().unwrap() as i64, s), depth, 0);
            }
            Node::Bin(op, a, b) => {
                self.emit(a, slots, constants, depth)?;
                self.emit(b, slots, constants, depth)?;
                let s = self.site(e);
                self.push(Op::Bin(*op, s), depth, -1);
            }
            Node::Call(f, a) => {
                self.emit(a, slots, constants, depth)?;
                let s = self.site(e);
                self.push(Op::Call(*f, s), depth, 0);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Literal value if the tape is a single constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        }
    }

    /// Evaluate with a caller-provided scratch stack (avoids reallocations in hot loops).
    pub fn eval_with_stack(&self, inputs: &[f64], stack: &mut Vec<f64>) -> Result<f64, ExprError> {
        stack.clear();
        stack.reserve(self.depth);
        let domain = |kind, site: u32| ExprError::Domain {
            kind,
            at: self.sites[site as usize].to_string(),
        };
        for op in &self.ops {
            match *op {
                Op::Const(v) => stack.push(v),
                Op::Slot(i) => stack.push(inputs[i as usize]),
                Op::Neg => {
                    let top = stack.last_mut().expect("tape underflow");
                    *top = -*top;
                }
                Op::Bin(bop, s) => {
                    let b = stack.pop().expect("tape underflow");
                    let a = stack.last_mut().expect("tape underflow");
                    *a = bop.apply(*a, b).map_err(|k| domain(k, s))?;
                }
                Op::PowInt(n, s) => {
                    let a = stack.last_mut().expect("tape underflow");
                    *a = powi_exact(*a, n).map_err(|k| domain(k, s))?;
                }
                Op::Call(f, s) => {
                    let a = stack.last_mut().expect("tape underflow");
                    *a = f.apply(*a).map_err(|k| domain(k, s))?;
                }
            }
        }
        Ok(stack.pop().expect("empty tape"))
    }

    pub fn eval(&self, inputs: &[f64]) -> Result<f64, ExprError> {
        let mut stack = Vec::with_capacity(self.depth);
        self.eval_with_stack(inputs, &mut stack)
    }
}
