"""Print the analytic latency model for the measured 128 MB rows.

No simulation runs here; this is the closed-form view of each row:
sequential vs overlapped end-to-end time and the saving.
"""

from truffle import model


def main():
    print(f"{'storage':<14}{'sched':>7}{'cold':>7}{'xfer':>7}{'exec':>6}{'seq':>7}{'ovl':>7}{'saved':>7}{'%':>7}")
    for name, row in model.REFERENCE_ROWS.items():
        r = model.report(row)
        pct = 100 * r.delta_improvement_ms / r.tau_baseline_ms
        print(f"{name:<14}{row.alpha_ms:>7.0f}{row.beta_ms:>7.0f}{row.delta_ms:>7.0f}{row.gamma_ms:>6.0f}"
              f"{r.tau_baseline_ms:>7.0f}{r.tau_truffle_ms:>7.0f}{r.delta_improvement_ms:>7.0f}{pct:>7.1f}")


if __name__ == "__main__":
    main()
