"""Cross-validated task-specific vs task-invariant GPR on a small synthetic cohort."""

from usgait.experiment import (
    ExperimentConfig, cohort_report, cohort_swing_flexion, prepare_subject,
    render_report, run_cohort,
)
from usgait.frames import Task
from usgait.synth import SynthConfig, generate_subject

synth = SynthConfig(subjects=3, strides_per_task={Task.LEVEL: 12, Task.INCLINE: 12, Task.DECLINE: 12},
                    stair_trials=3, stair_steady_strides={Task.STAIR_ASCENT: 6, Task.STAIR_DESCENT: 6})
subjects = [prepare_subject([t for t, _ in generate_subject(synth, s)]) for s in range(synth.subjects)]
config = ExperimentConfig(hyper_mode="first_fold", restarts=1, max_iter=80, hyper_rows=150)

outcomes = run_cohort(subjects, config)
report = cohort_report(outcomes)
print(render_report(report, cohort_swing_flexion(outcomes)))
