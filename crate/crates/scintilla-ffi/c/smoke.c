#include <stdio.h>
#include <string.h>
#include "scintilla.h"

int main(void) {
    double r0 = 0.0;
    if (scintilla_fried_parameter(1e-14, 633e-9, 1000.0, &r0) != SCINTILLA_STATUS_OK) {
        fprintf(stderr, "fried: %s\n", scintilla_last_error());
        return 1;
    }

    ScintillaBasis *basis = NULL;
    ScintillaCouplings *c = NULL;
    if (scintilla_basis_lg_first(3, 0.01, 64, 0.0, &basis) != SCINTILLA_STATUS_OK ||
        scintilla_couplings_compute(basis, 633e-9, 1e-14, 50.0, &c) != SCINTILLA_STATUS_OK) {
        fprintf(stderr, "couplings: %s\n", scintilla_last_error());
        return 1;
    }
    size_t n = scintilla_couplings_dim(c);
    double rr[9] = {1.0}, ri[9] = {0.0}, orr[9], oi[9];
    if (n != 3 || scintilla_evolve(c, rr, ri, 100.0, 0.0, orr, oi) != SCINTILLA_STATUS_OK) {
        fprintf(stderr, "evolve: %s\n", scintilla_last_error());
        return 1;
    }

    /* errors come back as codes, with a message */
    if (scintilla_fried_parameter(-1.0, 633e-9, 1000.0, &r0) != SCINTILLA_STATUS_DOMAIN ||
        strlen(scintilla_last_error()) == 0) {
        return 1;
    }

    printf("r0 %.6e rho00 %.6f\n", r0, orr[0]);
    scintilla_couplings_free(c);
    scintilla_basis_free(basis);
    return 0;
}
