#include <stdio.h>
#include <stdlib.h>

#include "atomdl.h"

#define CHECK(call)                                                   \
    do {                                                              \
        AtomdlStatus st_ = (call);                                    \
        if (st_ != ATOMDL_STATUS_OK) {                                \
            char msg_[512];                                           \
            atomdl_last_error_message(msg_, sizeof msg_);             \
            fprintf(stderr, "%s failed (%d): %s\n", #call, st_, msg_); \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    AtomdlDataset *ds = NULL;
    CHECK(atomdl_dataset_generate_default(5, &ds));
    size_t t, n, k_true;
    CHECK(atomdl_dataset_shape(ds, &t, &n, &k_true));

    double *x = malloc(t * n * sizeof *x);
    double *anchor = malloc(t * sizeof *anchor);
    CHECK(atomdl_dataset_copy_x(ds, x, t * n));
    CHECK(atomdl_dataset_copy_task_anchor(ds, anchor, t));

    AtomdlFitOptions opts;
    CHECK(atomdl_fit_options_default(&opts));
    opts.mode = ATOMDL_MODE_ATOM_ASSISTED;
    opts.k = 8;
    opts.n_outer = 3;
    opts.n_inner = 3;

    AtomdlFit *fit = NULL;
    CHECK(atomdl_fit_run(x, t, n, anchor, 1, &opts, &fit));
    size_t ft, k, fn, iters;
    CHECK(atomdl_fit_shape(fit, &ft, &k, &fn, &iters));
    bool feasible = false;
    CHECK(atomdl_fit_is_feasible(fit, &feasible));
    double r, e;
    CHECK(atomdl_fit_score_task(fit, ds, &r, &e));

    if (atomdl_dataset_copy_x(ds, x, 1) != ATOMDL_STATUS_BUFFER_TOO_SMALL) {
        fprintf(stderr, "short buffer accepted\n");
        return 1;
    }
    printf("t=%zu n=%zu k=%zu iters=%zu feasible=%d\n", ft, fn, k, iters, feasible ? 1 : 0);

    atomdl_fit_free(fit);
    atomdl_dataset_free(ds);
    free(x);
    free(anchor);
    return 0;
}
