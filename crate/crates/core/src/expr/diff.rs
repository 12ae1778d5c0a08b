use super::{BinOp, Expr, Func, Node};

impl Expr {
    /// Exact partial derivative with respect to the variable `wrt`.
    ///
    /// The result is built through the folding constructors, so derivatives
    /// of constant subtrees collapse to literal zeros instead of growing.
    pub fn diff(&self, wrt: &str) -> Expr {
        if !self.depends_on(wrt) {
            return Expr::zero();
        }
        match self.node() {
            Node::Num(_) => Expr::zero(),
            Node::Var(n) => {
                if &**n == wrt {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Neg(a) => Expr::neg(a.diff(wrt)),
            Node::Bin(op, a, b) => {
                let da = a.diff(wrt);
                let db = b.diff(wrt);
                match op {
                    BinOp::Add => Expr::add(da, db),
                    BinOp::Sub => Expr::sub(da, db),
                    BinOp::Mul => Expr::add(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db)),
                    BinOp::Div => {
                        if db.is_zero() {
                            Expr::div(da, b.clone())
                        } else {
                            // (a'b - ab') / b^2
                            let num = Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db));
                            Expr::div(num, Expr::pow(b.clone(), Expr::num(2.0)))
                        }
                    }
                    BinOp::Pow => {
                        if !b.depends_on(wrt) {
                            // b a^(b-1) a'
                            let lowered = match b.as_num() {
                                Some(k) => Expr::num(k - 1.0),
                                None => Expr::sub(b.clone(), Expr::one()),
                            };
                            Expr::mul(Expr::mul(b.clone(), Expr::pow(a.clone(), lowered)), da)
                        } else {
                            // a^b (b' ln a + b a'/a)
                            let t1 = Expr::mul(db, Expr::call(Func::Ln, a.clone()));
                            let t2 = Expr::div(Expr::mul(b.clone(), da), a.clone());
                            Expr::mul(self.clone(), Expr::add(t1, t2))
                        }
                    }
                }
            }
            Node::Call(f, a) => {
                let da = a.diff(wrt);
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, a.clone()),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, a.clone())),
                    Func::Tan => {
                        let t = Expr::call(Func::Tan, a.clone());
                        Expr::add(Expr::one(), Expr::pow(t, Expr::num(2.0)))
                    }
                    Func::Exp => self.clone(),
                    Func::Ln => return Expr::div(da, a.clone()),
                    Func::Sqrt => Expr::div(Expr::num(0.5), self.clone()),
                    Func::Abs => Expr::call(Func::Sign, a.clone()),
                    Func::Sign => return Expr::zero(),
                };
                Expr::mul(outer, da)
            }
        }
    }
}
