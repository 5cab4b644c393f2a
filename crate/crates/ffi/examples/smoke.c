/* Minimal C client: build a model, run forward and loss+gradient. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "dqnn.h"

int main(void) {
    DqnnModel *m = NULL;
    DqnnStatus st = dqnn_model_new(4, 10, 2, 5, 1.0, &m);
    if (st != DQNN_STATUS_OK) {
        fprintf(stderr, "new: %s\n", dqnn_last_error_message());
        return 1;
    }
    dqnn_model_init_params(m, 3);
    size_t n = dqnn_model_num_params(m);
    double x[40];
    for (int i = 0; i < 40; i++) x[i] = 0.02 * i;
    double logits[10], probs[10];
    if (dqnn_model_forward(m, x, 40, logits, probs, 10) != DQNN_STATUS_OK) return 2;
    double loss = 0.0;
    double *grad = calloc(n, sizeof(double));
    if (dqnn_model_loss_grad(m, x, 40, 4, &loss, grad, n) != DQNN_STATUS_OK) return 3;
    if (fabs(loss + log(probs[4])) > 1e-12) return 4;
    st = dqnn_model_forward(m, x, 39, logits, NULL, 10);
    if (st != DQNN_STATUS_SHAPE) return 5;
    printf("params %zu loss %.6f status '%s'\n", n, loss, dqnn_status_name(st));
    free(grad);
    dqnn_model_free(m);
    return 0;
}
