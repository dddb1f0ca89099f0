// transformers.js is an optional peer dependency: the hf backend imports it
// lazily and fails with a clear message when it is absent. This shorthand
// declaration keeps the build green without the package installed; when the
// real package is present its own types take over.
declare module "@huggingface/transformers";
