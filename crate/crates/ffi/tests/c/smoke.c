#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "fusionattn.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        FaStatus st_ = (call);                                             \
        if (st_ != FA_OK) {                                                \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)st_,       \
                    fa_last_error());                                      \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    FaModel *model = NULL;
    CHECK(fa_model_new("self", "ta", true, 4, 2, 1, &model));

    size_t modules = 0;
    CHECK(fa_model_attention_modules(model, &modules));
    if (modules != 2) return 2;

    const FaTensor *inputs[2];
    FaTensor *owned[2];
    const char codes[2] = {'a', 't'};
    for (int i = 0; i < 2; i++) {
        size_t dims[2];
        CHECK(fa_model_input_shape(model, codes[i], &dims[0], &dims[1]));
        double *data = calloc(dims[0] * dims[1], sizeof(double));
        for (size_t k = 0; k < dims[0] * dims[1]; k++) data[k] = sin((double)k);
        CHECK(fa_tensor_new(dims, 2, data, &owned[i]));
        inputs[i] = owned[i];
        free(data);
    }

    double probs[7];
    CHECK(fa_model_predict(model, inputs, 2, probs, 7));
    double sum = 0.0;
    for (int i = 0; i < 7; i++) sum += probs[i];
    if (fabs(sum - 1.0) > 1e-12) return 3;

    if (fa_model_predict(model, inputs, 1, probs, 7) != FA_ERR_INVALID) return 4;

    for (int i = 0; i < 2; i++) fa_tensor_free(owned[i]);
    fa_model_free(model);
    printf("ok\n");
    return 0;
}
