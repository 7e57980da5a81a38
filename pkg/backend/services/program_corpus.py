"""Reference programs used for oracle checks and demo runs"""

NATURALS = """
N where
    dimension t;
    N = 0 fby.t (N + 1);
end
"""

COUNTER = """
// odd numbers, each step computed by a worker tier
C where
    dimension t;
    C = 1 fby.t add(C, 2);
end
"""

FIB = """
fib where
    dimension t;
    fib = if #t <= 1 then #t else fib @ t:(#t - 1) + fib @ t:(#t - 2);
end
"""

RUNNING_SUM = """
S where
    dimension t;
    S = 0 fby.t add(S, #t + 1);
end
"""

SQUARES = """
Q where
    dimension t;
    Q = square(#t) + first.t next.t Base;
    Base = 0;
end
"""

CORPUS = {
    "naturals": NATURALS,
    "counter": COUNTER,
    "fib": FIB,
    "running_sum": RUNNING_SUM,
    "squares": SQUARES,
}
