import { ApiClient } from "./api.js";
import { AnnotatorApp } from "./app.js";

// ?api=http://host:port points the UI at a service on another origin;
// by default it talks to whatever served the page.
const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "";
new AnnotatorApp(document, new ApiClient(base));
